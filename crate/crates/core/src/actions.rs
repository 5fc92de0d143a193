//! The action grammar and Stage-1 planning.
//!
//! Grammar, one call per line (several calls per line are also accepted):
//!
//! ```text
//! web_search("<query>")
//! image_search("<query>")
//! reverse_search(<image:k>)
//! geolocate(<image:k>)
//! ```
//!
//! Query strings are double-quoted; `\"`, `\\` and `\n` are the only escapes.
//! Image arguments are `<image:k>`; `image:k` and a bare `k` are tolerated.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::claim::{MediaId, MediaRegistry};
use crate::error::{Error, Result};
use crate::llm::{extract_code_block, Binding, Gateway, TemplateName, TemplateSet};
use crate::report::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    WebSearch,
    ImageSearch,
    ReverseSearch,
    Geolocate,
}

impl ActionKind {
    pub const ALL: [ActionKind; 4] = [
        ActionKind::Geolocate,
        ActionKind::ReverseSearch,
        ActionKind::WebSearch,
        ActionKind::ImageSearch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::WebSearch => "web_search",
            ActionKind::ImageSearch => "image_search",
            ActionKind::ReverseSearch => "reverse_search",
            ActionKind::Geolocate => "geolocate",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ActionKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(name))
    }

    pub fn description(self) -> &'static str {
        match self {
            ActionKind::Geolocate => "Determine the country where an image was taken by providing an image ID.",
            ActionKind::ReverseSearch => "Perform a reverse image search on the web for similar images.",
            ActionKind::WebSearch => "Run an open web search for related webpages.",
            ActionKind::ImageSearch => "Retrieve related images for a given query.",
        }
    }

    pub fn takes_image(self) -> bool {
        matches!(self, ActionKind::ReverseSearch | ActionKind::Geolocate)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum Action {
    WebSearch { query: String },
    ImageSearch { query: String },
    ReverseImageSearch { image: MediaId },
    Geolocate { image: MediaId },
}

pub fn normalize_query(q: &str) -> String {
    q.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn quote(q: &str) -> String {
    let mut out = String::with_capacity(q.len() + 2);
    out.push('"');
    for c in q.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::WebSearch { .. } => ActionKind::WebSearch,
            Action::ImageSearch { .. } => ActionKind::ImageSearch,
            Action::ReverseImageSearch { .. } => ActionKind::ReverseSearch,
            Action::Geolocate { .. } => ActionKind::Geolocate,
        }
    }

    pub fn image(&self) -> Option<MediaId> {
        match self {
            Action::ReverseImageSearch { image } | Action::Geolocate { image } => Some(*image),
            _ => None,
        }
    }

    pub fn query(&self) -> Option<&str> {
        match self {
            Action::WebSearch { query } | Action::ImageSearch { query } => Some(query),
            _ => None,
        }
    }

    /// Grammar form, e.g. `web_search("a b")`.
    pub fn to_call(&self) -> String {
        match self {
            Action::WebSearch { query } | Action::ImageSearch { query } => {
                format!("{}({})", self.kind().name(), quote(query))
            }
            Action::ReverseImageSearch { image } | Action::Geolocate { image } => {
                format!("{}({})", self.kind().name(), image)
            }
        }
    }

    /// Variant name plus normalized argument: collapsed lowercase query, or
    /// the image content hash so one image under two ids deduplicates.
    pub fn canonical_key(&self, registry: &MediaRegistry) -> Result<String> {
        let arg = match self {
            Action::WebSearch { query } | Action::ImageSearch { query } => normalize_query(query),
            Action::ReverseImageSearch { image } | Action::Geolocate { image } => {
                registry.resolve(*image)?.content_hash.to_hex()
            }
        };
        Ok(format!("{}:{}", self.kind().name(), arg))
    }

    pub fn validate(&self, registry: &MediaRegistry) -> Result<()> {
        match self {
            Action::WebSearch { query } | Action::ImageSearch { query } if query.trim().is_empty() => {
                Err(Error::Precondition(format!("{} needs a non-empty query", self.kind())))
            }
            Action::ReverseImageSearch { image } | Action::Geolocate { image } => registry.resolve(*image).map(|_| ()),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_call())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedActions {
    pub actions: Vec<Action>,
    pub warnings: Vec<String>,
    /// Image ids that were referenced but not registered.
    pub unknown_images: Vec<u32>,
}

enum Arg {
    Text(String),
    Raw(String),
}

/// Parses the argument list starting right after `(`. Returns the argument
/// and the byte offset just past the closing `)`.
fn scan_args(s: &str) -> Option<(Arg, usize)> {
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() && bytes[i].is_ascii_whitespace() {
        i += 1;
    }
    if i < bytes.len() && (bytes[i] == b'"' || bytes[i] == b'\'') {
        let delim = bytes[i] as char;
        let mut out = String::new();
        let mut chars = s[i + 1..].char_indices();
        let mut end = None;
        while let Some((j, c)) = chars.next() {
            match c {
                '\\' => match chars.next() {
                    Some((_, 'n')) => out.push('\n'),
                    Some((_, other)) => out.push(other),
                    None => break,
                },
                c if c == delim => {
                    end = Some(i + 1 + j + 1);
                    break;
                }
                c => out.push(c),
            }
        }
        let mut k = end?;
        while k < bytes.len() && bytes[k].is_ascii_whitespace() {
            k += 1;
        }
        return (k < bytes.len() && bytes[k] == b')').then_some((Arg::Text(out), k + 1));
    }
    let close = s.find(')')?;
    Some((Arg::Raw(s[..close].trim().to_owned()), close + 1))
}

fn parse_image_arg(raw: &str) -> Option<u32> {
    let t = raw.trim().trim_matches('`').trim();
    let t = t.strip_prefix('<').and_then(|x| x.strip_suffix('>')).unwrap_or(t);
    let t = t.strip_prefix("image:").unwrap_or(t).trim();
    t.parse().ok()
}

fn call_regex() -> &'static regex::Regex {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r"([A-Za-z_][A-Za-z0-9_]*)\(").expect("static regex"))
}

fn parse_into(block: &str, registry: &MediaRegistry, out: &mut ParsedActions) {
    for line in block.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut pos = 0;
        let mut found = false;
        while let Some(m) = call_regex().captures_at(trimmed, pos) {
            let whole = m.get(0).expect("group 0");
            let name = &m[1];
            let rest = &trimmed[whole.end()..];
            let Some((arg, consumed)) = scan_args(rest) else {
                out.warnings.push(format!("malformed call: {trimmed}"));
                found = true;
                break;
            };
            pos = whole.end() + consumed;
            found = true;
            let Some(kind) = ActionKind::from_name(name) else {
                out.warnings.push(format!("unknown action: {name}"));
                continue;
            };
            let action = match (kind, arg) {
                (ActionKind::WebSearch | ActionKind::ImageSearch, Arg::Text(q)) if !q.trim().is_empty() => {
                    if kind == ActionKind::WebSearch {
                        Action::WebSearch { query: q }
                    } else {
                        Action::ImageSearch { query: q }
                    }
                }
                (ActionKind::WebSearch | ActionKind::ImageSearch, _) => {
                    out.warnings
                        .push(format!("{name} needs a non-empty quoted query: {trimmed}"));
                    continue;
                }
                (_, Arg::Raw(raw)) => match parse_image_arg(&raw) {
                    Some(k) if registry.contains(MediaId(k)) => {
                        let image = MediaId(k);
                        if kind == ActionKind::Geolocate {
                            Action::Geolocate { image }
                        } else {
                            Action::ReverseImageSearch { image }
                        }
                    }
                    Some(k) => {
                        out.warnings
                            .push(format!("{name} references unknown image <image:{k}>"));
                        out.unknown_images.push(k);
                        continue;
                    }
                    None => {
                        out.warnings.push(format!("{name} needs an image reference: {trimmed}"));
                        continue;
                    }
                },
                (_, Arg::Text(_)) => {
                    out.warnings
                        .push(format!("{name} takes an image reference, not a string"));
                    continue;
                }
            };
            out.actions.push(action);
        }
        if !found {
            out.warnings.push(format!("no action in line: {trimmed}"));
        }
    }
}

/// Parses planner output without failing on unresolved images; they are
/// reported in `unknown_images` and as warnings.
pub fn parse_actions_lenient(block: &str, registry: &MediaRegistry) -> ParsedActions {
    let mut out = ParsedActions::default();
    parse_into(block, registry, &mut out);
    out
}

/// Parses a block of action calls. Unknown names and malformed lines become
/// warnings; an unresolved `<image:k>` is an error.
pub fn parse_actions(block: &str, registry: &MediaRegistry) -> Result<ParsedActions> {
    let out = parse_actions_lenient(block, registry);
    match out.unknown_images.first() {
        Some(k) => Err(Error::UnknownImageRef(*k)),
        None => Ok(out),
    }
}

/// Drops actions whose key is in `history` and collapses repeats within the batch.
pub fn dedup(actions: Vec<Action>, history: &BTreeSet<String>, registry: &MediaRegistry) -> Vec<Action> {
    let mut seen = HashSet::new();
    actions
        .into_iter()
        .filter(|a| match a.canonical_key(registry) {
            Ok(key) => !history.contains(&key) && seen.insert(key),
            Err(_) => false,
        })
        .collect()
}

/// Action kinds still worth offering: enabled ones, minus image actions that
/// were already applied to every claim image.
pub fn available_kinds(report: &Report, enabled: &BTreeSet<ActionKind>) -> Vec<ActionKind> {
    let claim_images = report.claim().image_ids();
    ActionKind::ALL
        .into_iter()
        .filter(|k| enabled.contains(k))
        .filter(|k| {
            if !k.takes_image() {
                return true;
            }
            claim_images.iter().any(|id| {
                let probe = match k {
                    ActionKind::Geolocate => Action::Geolocate { image: *id },
                    _ => Action::ReverseImageSearch { image: *id },
                };
                probe
                    .canonical_key(report.registry())
                    .map(|key| !report.action_history().contains(&key))
                    .unwrap_or(false)
            })
        })
        .collect()
}

pub fn valid_actions_text(kinds: &[ActionKind]) -> String {
    kinds
        .iter()
        .map(|k| format!("* `{}`: {}", k.name(), k.description()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Keeps only example lines whose action is offered; other lines stay as-is.
pub fn filter_examples(examples: &str, kinds: &[ActionKind]) -> String {
    examples
        .lines()
        .filter(|line| {
            ActionKind::ALL
                .into_iter()
                .filter(|k| line.contains(&format!("{}(", k.name())))
                .all(|k| kinds.contains(&k))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerSettings {
    pub enabled: BTreeSet<ActionKind>,
    pub max_actions_per_iteration: usize,
    pub extra_rules: String,
}

impl Default for PlannerSettings {
    fn default() -> Self {
        Self {
            enabled: ActionKind::ALL.into_iter().collect(),
            max_actions_per_iteration: 5,
            extra_rules: String::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanOutcome {
    pub actions: Vec<Action>,
    pub warnings: Vec<String>,
    pub fallback: bool,
    pub response: String,
}

/// One planning call: prompt, extract, parse, dedup against history, cap.
pub fn plan(
    gateway: &Gateway,
    templates: &TemplateSet,
    report: &Report,
    settings: &PlannerSettings,
) -> Result<PlanOutcome> {
    let kinds = available_kinds(report, &settings.enabled);
    if kinds.is_empty() {
        return Ok(PlanOutcome::default());
    }
    let template = templates.get(TemplateName::Plan);
    let examples = filter_examples(&templates.plan_examples, &kinds);
    let valid = valid_actions_text(&kinds);
    let overhead = gateway.estimator().text(&format!(
        "{}{}{}{}",
        template.body, settings.extra_rules, valid, examples
    ));
    let budget = gateway.config().prompt_budget().saturating_sub(overhead);
    let record = report.snapshot_for_prompt(budget, gateway.estimator())?;
    let bindings: BTreeMap<&str, Binding> = [
        ("Extra Rules", Binding::Literal(settings.extra_rules.clone())),
        ("Valid Actions", Binding::Literal(valid)),
        ("Examples", Binding::Literal(examples)),
        ("Record", Binding::Text(record)),
    ]
    .into_iter()
    .collect();
    let content = template.fill(&bindings)?;
    let response = gateway.complete(TemplateName::Plan, content, report.registry())?;
    let block = extract_code_block(&response);
    let parsed = parse_actions_lenient(&block.text, report.registry());
    let mut warnings = parsed.warnings;
    let offered: Vec<Action> = parsed
        .actions
        .into_iter()
        .filter(|a| {
            let ok = kinds.contains(&a.kind());
            if !ok {
                warnings.push(format!("action not offered this round: {a}"));
            }
            ok
        })
        .collect();
    let mut actions = dedup(offered, report.action_history(), report.registry());
    if actions.len() > settings.max_actions_per_iteration {
        warnings.push(format!(
            "planner proposed {} actions; keeping the first {}",
            actions.len(),
            settings.max_actions_per_iteration
        ));
        actions.truncate(settings.max_actions_per_iteration);
    }
    Ok(PlanOutcome {
        actions,
        warnings,
        fallback: block.fallback,
        response,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const PNG: &[u8] = &[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, 1, 2, 3];

    fn registry_with(n: usize) -> MediaRegistry {
        let reg = MediaRegistry::new();
        for i in 0..n {
            let mut bytes = PNG.to_vec();
            bytes.extend_from_slice(&(i as u32).to_le_bytes());
            reg.register_image(&bytes, None).unwrap();
        }
        reg
    }

    #[test]
    fn parses_grammar_lines() {
        let reg = registry_with(2);
        let block = "web_search(\"China officials white suits carry people\")\n* `geolocate(<image:2>)`\nreverse_search(image:1)";
        let parsed = parse_actions(block, &reg).unwrap();
        assert_eq!(
            parsed.actions,
            vec![
                Action::WebSearch {
                    query: "China officials white suits carry people".into()
                },
                Action::Geolocate { image: MediaId(2) },
                Action::ReverseImageSearch { image: MediaId(1) },
            ]
        );
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn tolerates_case_and_single_quotes() {
        let parsed = parse_actions("Web_Search('gas stoves')\nIMAGE_SEARCH(\"bus\")", &registry_with(0)).unwrap();
        assert_eq!(
            parsed.actions,
            vec![
                Action::WebSearch {
                    query: "gas stoves".into()
                },
                Action::ImageSearch { query: "bus".into() },
            ]
        );
    }

    #[test]
    fn large_image_ids_parse() {
        let reg = registry_with(1232);
        let parsed = parse_actions("geolocate(<image:1232>)", &reg).unwrap();
        assert_eq!(parsed.actions, vec![Action::Geolocate { image: MediaId(1232) }]);
    }

    #[test]
    fn unknown_action_is_a_warning() {
        let parsed = parse_actions("frobnicate(\"x\")", &MediaRegistry::new()).unwrap();
        assert!(parsed.actions.is_empty());
        assert_eq!(parsed.warnings, vec!["unknown action: frobnicate".to_string()]);
    }

    #[test]
    fn unresolved_image_is_an_error() {
        let err = parse_actions("geolocate(<image:7>)", &registry_with(1)).unwrap_err();
        assert!(matches!(err, Error::UnknownImageRef(7)));
        let lenient = parse_actions_lenient("geolocate(<image:7>)\nweb_search(\"a\")", &registry_with(1));
        assert_eq!(lenient.actions.len(), 1);
        assert_eq!(lenient.unknown_images, vec![7]);
    }

    #[test]
    fn several_calls_on_one_line_and_escapes() {
        let parsed = parse_actions(
            r#"web_search("say \"hi\"") image_search("a\\b")"#,
            &MediaRegistry::new(),
        )
        .unwrap();
        assert_eq!(
            parsed.actions,
            vec![
                Action::WebSearch {
                    query: "say \"hi\"".into()
                },
                Action::ImageSearch { query: "a\\b".into() }
            ]
        );
    }

    #[test]
    fn empty_query_rejected() {
        let parsed = parse_actions("web_search(\"  \")\nweb_search(unquoted)", &MediaRegistry::new()).unwrap();
        assert!(parsed.actions.is_empty());
        assert_eq!(parsed.warnings.len(), 2);
    }

    #[test]
    fn dedup_rules() {
        let reg = MediaRegistry::new();
        let ws = |q: &str| Action::WebSearch { query: q.into() };
        assert_eq!(dedup(vec![ws("a"), ws("a")], &BTreeSet::new(), &reg), vec![ws("a")]);
        let history: BTreeSet<String> = ["web_search:a b".to_string()].into();
        assert!(dedup(vec![ws("A  b")], &history, &reg).is_empty());
        assert!(dedup(vec![], &history, &reg).is_empty());
        // Same query under another tool is a different action.
        assert_eq!(
            dedup(vec![Action::ImageSearch { query: "a b".into() }], &history, &reg).len(),
            1
        );
    }

    #[test]
    fn image_key_uses_content_hash() {
        let reg = registry_with(1);
        let a = Action::Geolocate { image: MediaId(1) };
        let key = a.canonical_key(&reg).unwrap();
        assert_eq!(
            key,
            format!("geolocate:{}", reg.get(MediaId(1)).unwrap().content_hash.to_hex())
        );
    }

    #[test]
    fn example_filtering() {
        let ex = "* `geolocate(<image:k>)`\n* `web_search(\"x\")`\nplain line";
        assert_eq!(
            filter_examples(ex, &[ActionKind::WebSearch]),
            "* `web_search(\"x\")`\nplain line"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn action(max_image: u32) -> impl Strategy<Value = Action> {
            let query = "[ -~\\n]{1,40}".prop_filter("non-blank", |q: &String| !q.trim().is_empty());
            prop_oneof![
                query.clone().prop_map(|query| Action::WebSearch { query }),
                query.prop_map(|query| Action::ImageSearch { query }),
                (1..=max_image).prop_map(|k| Action::ReverseImageSearch { image: MediaId(k) }),
                (1..=max_image).prop_map(|k| Action::Geolocate { image: MediaId(k) }),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn parse_inverts_serialize(a in action(8)) {
                let reg = registry_with(8);
                let parsed = parse_actions(&a.to_call(), &reg).unwrap();
                prop_assert_eq!(parsed.actions, vec![a]);
            }
        }

        proptest! {
            #[test]
            fn dedup_is_idempotent(
                qs in prop::collection::vec("[a-cA-C ]{1,6}", 0..12),
                hist in prop::collection::vec("[a-c ]{1,6}", 0..4),
            ) {
                let reg = MediaRegistry::new();
                let actions: Vec<Action> = qs
                    .iter()
                    .filter(|q| !q.trim().is_empty())
                    .map(|q| Action::WebSearch { query: q.clone() })
                    .collect();
                let history: BTreeSet<String> = hist.iter().map(|h| format!("web_search:{}", normalize_query(h))).collect();
                let once = dedup(actions, &history, &reg);
                let twice = dedup(once.clone(), &history, &reg);
                prop_assert_eq!(&once, &twice);
                for a in &once {
                    prop_assert!(!history.contains(&a.canonical_key(&reg).unwrap()));
                }
            }

            #[test]
            fn canonical_key_matches_normalization_oracle(q in "[a-zA-Z \t]{1,30}") {
                prop_assume!(!q.trim().is_empty());
                let oracle: String = {
                    let lower = q.to_lowercase();
                    let mut out = String::new();
                    for w in lower.split([' ', '\t']).filter(|w| !w.is_empty()) {
                        if !out.is_empty() { out.push(' '); }
                        out.push_str(w);
                    }
                    out
                };
                let key = Action::WebSearch { query: q }.canonical_key(&MediaRegistry::new()).unwrap();
                prop_assert_eq!(key, format!("web_search:{oracle}"));
            }
        }
    }
}
