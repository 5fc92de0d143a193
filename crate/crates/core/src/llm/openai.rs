use base64::Engine;
use serde_json::{json, Value};

use crate::claim::{MediaRegistry, Segment};
use crate::llm::{ChatBackend, ChatRequest, ModelConfig};
use crate::net::{HttpClient, HttpFailure};

/// Chat completions over the OpenAI-style messages schema. Images are sent
/// inline as data URIs, each preceded by its `<image:k>` reference.
#[derive(Debug, Clone, Default)]
pub struct OpenAiChat {
    client: HttpClient,
}

impl OpenAiChat {
    pub fn new(client: HttpClient) -> Self {
        Self { client }
    }

    pub fn request_body(
        config: &ModelConfig,
        request: &ChatRequest,
        registry: &MediaRegistry,
    ) -> Result<Value, HttpFailure> {
        let mut parts = Vec::new();
        for seg in request.content.segments() {
            match seg {
                Segment::Text(t) => parts.push(json!({ "type": "text", "text": t })),
                Segment::Image(id) => {
                    let media = registry
                        .get(*id)
                        .ok_or_else(|| HttpFailure::Other(format!("unregistered image {id}")))?;
                    let data = base64::engine::general_purpose::STANDARD.encode(&media.bytes);
                    parts.push(json!({ "type": "text", "text": id.to_string() }));
                    parts.push(json!({
                        "type": "image_url",
                        "image_url": { "url": format!("data:{};base64,{data}", media.mime) },
                    }));
                }
            }
        }
        Ok(json!({
            "model": config.model_id,
            "temperature": config.temperature,
            "top_p": config.top_p,
            "max_tokens": config.max_output,
            "messages": [{ "role": "user", "content": parts }],
        }))
    }
}

impl ChatBackend for OpenAiChat {
    fn complete(
        &self,
        config: &ModelConfig,
        request: &ChatRequest,
        registry: &MediaRegistry,
    ) -> Result<String, HttpFailure> {
        let body = Self::request_body(config, request, registry)?;
        let auth = config.api_key.as_ref().map(|k| format!("Bearer {k}"));
        let mut headers = Vec::new();
        if let Some(a) = &auth {
            headers.push(("Authorization", a.as_str()));
        }
        let resp = self.client.post_json(&config.endpoint, &headers, &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| HttpFailure::Other("response has no choices[0].message.content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ChatContent, TemplateName};

    const PNG: &[u8] = &[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, 0, 0, 0, 0];

    #[test]
    fn images_are_inlined_at_their_position() {
        let reg = MediaRegistry::new();
        let m = reg.register_image(PNG, None).unwrap();
        let mut content = ChatContent::text("before ");
        content.push_image(m.id);
        content.push_text(" after");
        let req = ChatRequest {
            task: TemplateName::Judge,
            content,
        };
        let body = OpenAiChat::request_body(&ModelConfig::default(), &req, &reg).unwrap();
        let parts = body["messages"][0]["content"].as_array().unwrap();
        assert_eq!(parts.len(), 4);
        assert_eq!(parts[1]["text"], "<image:1>");
        assert!(parts[2]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/png;base64,"));
        assert_eq!(parts[3]["text"], " after");
        assert_eq!(body["temperature"], 0.01);
    }
}
