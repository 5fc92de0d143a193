//! Turning raw tool output into evidence blocks.

use std::collections::BTreeMap;

use crate::claim::{replace_image_refs, MediaRef};
use crate::error::{Error, Result};
use crate::llm::{classify_none, Binding, Gateway, NoneDetection, TemplateName, TemplateSet};
use crate::report::{EvidenceBlock, Report};
use crate::tools::{GeoDistribution, SearchResult};

/// Longest page text passed to the summarizer, in characters.
pub const DEFAULT_MAX_RESULT_CHARS: usize = 24_000;

/// The `[Search_Result]` text. Images shown by the page but not referenced
/// inline are listed after the content.
pub fn render_result(result: &SearchResult, max_chars: usize) -> String {
    let mut out = String::new();
    if !result.title.trim().is_empty() {
        out.push_str(&format!("Title: {}\n", result.title.trim()));
    }
    out.push_str(&format!("URL: {}\n", result.url));
    if let Some(d) = result.published {
        out.push_str(&format!("Published: {}\n", d.format("%Y-%m-%d")));
    }
    out.push('\n');
    let content = result.content.trim();
    match content.char_indices().nth(max_chars) {
        Some((cut, _)) => {
            out.push_str(&content[..cut]);
            out.push_str("\n[...]");
        }
        None => out.push_str(content),
    }
    let inline = crate::claim::parse_image_refs(&out);
    let extra: Vec<String> = result
        .images
        .iter()
        .filter(|id| !inline.contains(id))
        .map(|id| id.to_string())
        .collect();
    if !extra.is_empty() {
        out.push_str(&format!("\n\nImages: {}", extra.join(" ")));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryOutcome {
    pub block: Option<EvidenceBlock>,
    pub warnings: Vec<String>,
    /// The model answered NONE and then kept talking.
    pub discarded_remainder: bool,
}

/// Stage 3 for one result: `None` when the model judged it irrelevant.
pub fn summarize_result(
    gateway: &Gateway,
    templates: &TemplateSet,
    result: &SearchResult,
    report: &Report,
    max_result_chars: usize,
) -> Result<SummaryOutcome> {
    let template = templates.get(TemplateName::Summarize);
    let rendered = render_result(result, max_result_chars);
    let overhead = gateway.estimator().text(&format!(
        "{}{}{}",
        template.body, templates.summarize_examples, rendered
    ));
    let budget = gateway.config().prompt_budget().saturating_sub(overhead).max(1);
    let record = report.snapshot_for_prompt(budget, gateway.estimator())?;
    let bindings: BTreeMap<&str, Binding> = [
        ("Examples", Binding::Literal(templates.summarize_examples.clone())),
        ("Record", Binding::Text(record)),
        ("Search_Result", Binding::Text(rendered)),
    ]
    .into_iter()
    .collect();
    let content = template.fill(&bindings)?;
    let response = gateway.complete(TemplateName::Summarize, content, report.registry())?;

    match classify_none(&response) {
        NoneDetection::None => {
            return Ok(SummaryOutcome {
                block: None,
                warnings: Vec::new(),
                discarded_remainder: false,
            })
        }
        NoneDetection::NoneWithRemainder => {
            return Ok(SummaryOutcome {
                block: None,
                warnings: vec![format!(
                    "summary of {} began with NONE; remainder discarded",
                    result.url
                )],
                discarded_remainder: true,
            })
        }
        NoneDetection::Content => {}
    }

    let registry = report.registry();
    let mut warnings = Vec::new();
    let summary = replace_image_refs(response.trim(), |id| {
        if result.images.contains(&id) || registry.contains(id) {
            Ok(id.to_string())
        } else {
            warnings.push(format!("summary of {} cited unknown {id}; removed", result.url));
            Ok(String::new())
        }
    })?;
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Ok(SummaryOutcome {
        block: Some(EvidenceBlock {
            tool: result.tool.clone(),
            source_url: Some(result.url.clone()).filter(|u| !u.is_empty()),
            title: Some(result.title.clone()).filter(|t| !t.trim().is_empty()),
            result_date: result.published,
            summary,
        }),
        warnings,
        discarded_remainder: false,
    })
}

/// Deterministic text for a geolocation result; no model call.
pub fn summarize_geolocation(dist: &GeoDistribution, image: &MediaRef) -> Result<EvidenceBlock> {
    if dist.entries().is_empty() {
        return Err(Error::Precondition("empty geolocation distribution".into()));
    }
    let listed: Vec<String> = dist
        .entries()
        .iter()
        .map(|e| format!("{} ({:.1}%)", e.name, e.probability * 100.0))
        .collect();
    let summary = format!(
        "Geolocation: most likely {}. Estimated from {}.",
        listed.join(", "),
        image.id
    );
    Ok(EvidenceBlock {
        tool: "geolocate".into(),
        source_url: None,
        title: None,
        result_date: None,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claim::{MediaId, MediaRegistry};
    use crate::tools::GeoScore;

    const PNG: &[u8] = &[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, 9];

    fn geo(scores: &[(&str, &str, f64)]) -> GeoDistribution {
        GeoDistribution::from_scores(
            scores
                .iter()
                .map(|(c, n, s)| GeoScore {
                    code: c.to_string(),
                    name: Some(n.to_string()),
                    score: *s,
                })
                .collect(),
            5,
        )
        .unwrap()
    }

    #[test]
    fn geolocation_sentence() {
        let reg = MediaRegistry::new();
        let img = reg.register_image(PNG, None).unwrap();
        let block =
            summarize_geolocation(&geo(&[("PL", "Poland", 0.41), ("CZ", "Czech Republic", 0.33)]), &img).unwrap();
        assert_eq!(
            block.summary,
            "Geolocation: most likely Poland (41.0%), Czech Republic (33.0%). Estimated from <image:1>."
        );
        assert_eq!(block.tool, "geolocate");
        let single = summarize_geolocation(&geo(&[("XX", "Nowhere", 1.0)]), &img).unwrap();
        assert_eq!(
            single.summary,
            "Geolocation: most likely Nowhere (100.0%). Estimated from <image:1>."
        );
    }

    #[test]
    fn result_rendering_lists_unreferenced_images() {
        let r = SearchResult {
            url: "https://a.org".into(),
            title: "A".into(),
            content: "text <image:2> more".into(),
            images: vec![MediaId(2), MediaId(3)],
            published: chrono::NaiveDate::from_ymd_opt(2024, 1, 2),
            tool: "web_search".into(),
        };
        let out = render_result(&r, 1000);
        assert_eq!(
            out,
            "Title: A\nURL: https://a.org\nPublished: 2024-01-02\n\ntext <image:2> more\n\nImages: <image:3>"
        );
        let short = render_result(&r, 4);
        assert!(short.contains("\n\ntext\n[...]"));
    }
}
