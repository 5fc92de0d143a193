use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde_json::Value;

use super::labels::{map_claimreview_label, MappedLabel, RatingRules};
use super::{BenchmarkInstance, Dataset, SkippedRow};
use crate::claim::{Claim, MediaId, Segment};
use crate::error::{Error, Result};
use crate::taxonomy::{Benchmark, LabelTaxonomy};
use crate::tools::parse_date;

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// MOCHEG claim ids to keep; defaults to `mocheg_ids.txt` beside the CSV.
    pub mocheg_ids: Option<PathBuf>,
    pub rating_rules: Option<RatingRules>,
}

pub fn default_file_name(b: Benchmark) -> &'static str {
    match b {
        Benchmark::Averitec => "dev.json",
        Benchmark::Mocheg => "Corpus2.csv",
        Benchmark::Verite => "VERITE.csv",
        Benchmark::Claimreview => "claims.json",
    }
}

pub fn load_dataset(b: Benchmark, path: &Path) -> Result<Dataset> {
    load_dataset_with(b, path, &LoadOptions::default())
}

pub fn load_dataset_with(b: Benchmark, path: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let file = resolve(b, path)?;
    let taxonomy = b.taxonomy();
    let mut ds = Dataset {
        benchmark: b,
        instances: Vec::new(),
        skipped: Vec::new(),
    };
    match b {
        Benchmark::Averitec => load_averitec(&file, &taxonomy, &mut ds)?,
        Benchmark::Mocheg => load_mocheg(&file, &taxonomy, opts, &mut ds)?,
        Benchmark::Verite => load_verite(&file, &taxonomy, &mut ds)?,
        Benchmark::Claimreview => load_claimreview(&file, &taxonomy, opts, &mut ds)?,
    }
    if ds.instances.is_empty() {
        return Err(Error::SchemaMismatch(format!(
            "{}: no usable instances ({} rows skipped)",
            file.display(),
            ds.skipped.len()
        )));
    }
    for s in &ds.skipped {
        tracing::debug!(row = s.row, "skipped: {}", s.reason);
    }
    Ok(ds)
}

fn resolve(b: Benchmark, path: &Path) -> Result<PathBuf> {
    let candidates = if path.is_dir() {
        let name = default_file_name(b);
        vec![path.join(name), path.join("test").join(name)]
    } else {
        vec![path.to_path_buf()]
    };
    candidates
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| Error::DatasetNotFound(path.to_path_buf()))
}

fn read_json_array(file: &Path) -> Result<Vec<Value>> {
    let text = std::fs::read_to_string(file)?;
    if text.trim().is_empty() {
        return Err(Error::SchemaMismatch(format!("{} is empty", file.display())));
    }
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Array(items)) => Ok(items),
        Ok(_) => Err(Error::SchemaMismatch(format!(
            "{}: expected a JSON array",
            file.display()
        ))),
        Err(e) => Err(Error::SchemaMismatch(format!("{}: {e}", file.display()))),
    }
}

fn str_field<'a>(v: &'a Value, names: &[&str]) -> Option<&'a str> {
    names
        .iter()
        .find_map(|n| v.get(*n).and_then(Value::as_str))
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

fn parse_any_date(raw: &str) -> Option<NaiveDate> {
    parse_date(raw).or_else(|| NaiveDate::parse_from_str(raw.trim(), "%d-%m-%Y").ok())
}

fn gold(taxonomy: &LabelTaxonomy, raw: &str) -> Option<String> {
    taxonomy.lookup(raw).map(|l| l.id.clone())
}

fn load_averitec(file: &Path, taxonomy: &LabelTaxonomy, ds: &mut Dataset) -> Result<()> {
    for (i, item) in read_json_array(file)?.iter().enumerate() {
        let row = i + 1;
        let (Some(text), Some(raw_label)) = (str_field(item, &["claim"]), str_field(item, &["label"])) else {
            ds.skipped.push(SkippedRow {
                row,
                reason: "missing claim or label".into(),
            });
            continue;
        };
        let Some(label) = gold(taxonomy, raw_label) else {
            ds.skipped.push(SkippedRow {
                row,
                reason: format!("unknown label {raw_label:?}"),
            });
            continue;
        };
        let mut claim = Claim::from_text(text)?;
        let mut meta = BTreeMap::new();
        if let Some(s) = str_field(item, &["speaker"]) {
            claim = claim.with_claimant(s);
            meta.insert("speaker".into(), s.to_owned());
        }
        if let Some(d) = str_field(item, &["claim_date"]) {
            meta.insert("claim_date".into(), d.to_owned());
            if let Some(date) = parse_any_date(d) {
                claim = claim.with_date(date);
            }
        }
        if let Some(u) = str_field(item, &["original_claim_url"]) {
            claim = claim.with_origin(u);
        }
        ds.instances.push(BenchmarkInstance {
            id: i.to_string(),
            claim,
            gold: label,
            meta,
            images: Vec::new(),
        });
    }
    Ok(())
}

struct CsvTable {
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl CsvTable {
    fn read(file: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_path(file)
            .map_err(|e| Error::SchemaMismatch(format!("{}: {e}", file.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::SchemaMismatch(format!("{}: {e}", file.display())))?
            .iter()
            .map(|h| h.trim().trim_start_matches('\u{feff}').to_lowercase())
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            rows.push(rec.map_err(|e| Error::SchemaMismatch(format!("{}: {e}", file.display())))?);
        }
        Ok(Self { headers, rows })
    }

    fn column(&self, file: &Path, names: &[&str]) -> Result<usize> {
        self.optional(names)
            .ok_or_else(|| Error::SchemaMismatch(format!("{}: missing column {}", file.display(), names.join(" / "))))
    }

    fn optional(&self, names: &[&str]) -> Option<usize> {
        names.iter().find_map(|n| self.headers.iter().position(|h| h == n))
    }
}

fn cell(rec: &csv::StringRecord, col: usize) -> &str {
    rec.get(col).map(str::trim).unwrap_or("")
}

fn load_mocheg(file: &Path, taxonomy: &LabelTaxonomy, opts: &LoadOptions, ds: &mut Dataset) -> Result<()> {
    let table = CsvTable::read(file)?;
    if table.headers.is_empty() {
        return Err(Error::SchemaMismatch(format!("{} is empty", file.display())));
    }
    let id_col = table.column(file, &["claim_id", "id"])?;
    let claim_col = table.column(file, &["claim"])?;
    let label_col = table.column(file, &["cleaned_truthfulness", "truthfulness", "label"])?;
    let ruling_col = table.optional(&["ruling_outline", "ruling"]);
    let url_col = table.optional(&["snopes url", "url"]);

    let id_file = opts
        .mocheg_ids
        .clone()
        .or_else(|| Some(file.with_file_name("mocheg_ids.txt")).filter(|p| p.is_file()));
    let keep: Option<BTreeSet<String>> = match id_file {
        Some(p) => Some(
            std::fs::read_to_string(&p)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect(),
        ),
        None => None,
    };

    let mut seen = BTreeSet::new();
    for (i, rec) in table.rows.iter().enumerate() {
        let row = i + 1;
        let id = cell(rec, id_col);
        if id.is_empty() {
            ds.skipped.push(SkippedRow {
                row,
                reason: "missing claim_id".into(),
            });
            continue;
        }
        if !seen.insert(id.to_owned()) {
            continue;
        }
        match &keep {
            Some(ids) if !ids.contains(id) => continue,
            None if ruling_col.is_some_and(|c| cell(rec, c).is_empty()) => continue,
            _ => {}
        }
        let text = cell(rec, claim_col);
        let raw_label = cell(rec, label_col);
        let Some(label) = gold(taxonomy, raw_label) else {
            ds.skipped.push(SkippedRow {
                row,
                reason: format!("unknown label {raw_label:?}"),
            });
            continue;
        };
        let Ok(mut claim) = Claim::from_text(text) else {
            ds.skipped.push(SkippedRow {
                row,
                reason: "empty claim".into(),
            });
            continue;
        };
        let mut meta = BTreeMap::new();
        if let Some(url) = url_col.map(|c| cell(rec, c)).filter(|u| !u.is_empty()) {
            claim = claim.with_origin(url);
            meta.insert("url".into(), url.to_owned());
        }
        ds.instances.push(BenchmarkInstance {
            id: id.to_owned(),
            claim,
            gold: label,
            meta,
            images: Vec::new(),
        });
    }
    Ok(())
}

fn load_verite(file: &Path, taxonomy: &LabelTaxonomy, ds: &mut Dataset) -> Result<()> {
    let table = CsvTable::read(file)?;
    if table.headers.is_empty() {
        return Err(Error::SchemaMismatch(format!("{} is empty", file.display())));
    }
    let caption_col = table.column(file, &["caption"])?;
    let image_col = table.column(file, &["image_path", "image"])?;
    let label_col = table.column(file, &["label"])?;
    let id_col = table.optional(&["id", ""]);
    let base = file.parent().unwrap_or(Path::new("."));

    for (i, rec) in table.rows.iter().enumerate() {
        let row = i + 1;
        let (caption, image, raw_label) = (cell(rec, caption_col), cell(rec, image_col), cell(rec, label_col));
        if caption.is_empty() || image.is_empty() || raw_label.is_empty() {
            ds.skipped.push(SkippedRow {
                row,
                reason: "incomplete row".into(),
            });
            continue;
        }
        let image_path = base.join(image);
        if !image_path.is_file() {
            ds.skipped.push(SkippedRow {
                row,
                reason: format!("image not found: {}", image_path.display()),
            });
            continue;
        }
        let Some(label) = gold(taxonomy, raw_label) else {
            ds.skipped.push(SkippedRow {
                row,
                reason: format!("unknown label {raw_label:?}"),
            });
            continue;
        };
        let claim = Claim::new(vec![Segment::Image(MediaId(1)), Segment::Text(format!(" {caption}"))])?;
        let id = id_col
            .map(|c| cell(rec, c))
            .filter(|s| !s.is_empty())
            .map_or_else(|| i.to_string(), str::to_owned);
        ds.instances.push(BenchmarkInstance {
            id,
            claim,
            gold: label,
            meta: BTreeMap::from([("image_path".into(), image.to_owned())]),
            images: vec![image_path],
        });
    }
    Ok(())
}

fn load_claimreview(file: &Path, taxonomy: &LabelTaxonomy, opts: &LoadOptions, ds: &mut Dataset) -> Result<()> {
    let rules = opts.rating_rules.clone().unwrap_or_default();
    let base = file.parent().unwrap_or(Path::new("."));
    for (i, item) in read_json_array(file)?.iter().enumerate() {
        let row = i + 1;
        let (Some(text), Some(raw_label)) = (
            str_field(item, &["text", "claim", "claim_text"]),
            str_field(item, &["label", "verdict", "rating"]),
        ) else {
            ds.skipped.push(SkippedRow {
                row,
                reason: "missing text or label".into(),
            });
            continue;
        };
        let label = match gold(taxonomy, raw_label) {
            Some(l) => l,
            None => match map_claimreview_label(raw_label, &rules) {
                MappedLabel::Label(l) if taxonomy.contains(&l) => l,
                _ => {
                    ds.skipped.push(SkippedRow {
                        row,
                        reason: format!("unmapped rating {raw_label:?}"),
                    });
                    continue;
                }
            },
        };
        let mut images: Vec<PathBuf> = Vec::new();
        let mut listed: Vec<&str> = str_field(item, &["image", "image_path"]).into_iter().collect();
        if let Some(arr) = item.get("images").and_then(Value::as_array) {
            listed.extend(arr.iter().filter_map(Value::as_str));
        }
        let mut missing = None;
        for rel in listed {
            let p = base.join(rel);
            if p.is_file() {
                images.push(p);
            } else {
                missing = Some(p);
            }
        }
        if let Some(p) = missing {
            ds.skipped.push(SkippedRow {
                row,
                reason: format!("image not found: {}", p.display()),
            });
            continue;
        }
        let mut content: Vec<Segment> = (1..=images.len() as u32).map(|k| Segment::Image(MediaId(k))).collect();
        content.push(Segment::Text(if images.is_empty() {
            text.to_owned()
        } else {
            format!(" {text}")
        }));
        let mut claim = Claim::new(content)?;
        let mut meta = BTreeMap::from([("rating".to_owned(), raw_label.to_owned())]);
        if let Some(c) = str_field(item, &["claimant", "author", "speaker"]) {
            claim = claim.with_claimant(c);
            meta.insert("claimant".into(), c.to_owned());
        }
        if let Some(d) = str_field(item, &["date", "claim_date"]) {
            meta.insert("date".into(), d.to_owned());
            if let Some(date) = parse_any_date(d) {
                claim = claim.with_date(date);
            }
        }
        let id = match item.get("id") {
            Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_owned(),
            Some(Value::Number(n)) => n.to_string(),
            _ => i.to_string(),
        };
        ds.instances.push(BenchmarkInstance {
            id,
            claim,
            gold: label,
            meta,
            images,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::fake_png;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn averitec_rows() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "dev.json",
            r#"[{"claim":"A","label":"Refuted","claim_date":"25-8-2020","speaker":"X"},
                {"claim":"B","label":"Conflicting Evidence/Cherrypicking"},
                {"claim":"C","label":"Not Enough Evidence"},
                {"claim":"D","label":"Bogus"},
                {"label":"Supported"}]"#,
        );
        let ds = load_dataset(Benchmark::Averitec, dir.path()).unwrap();
        assert_eq!(ds.counts_of(&["refuted", "conflicting", "nei"]), [1, 1, 1]);
        assert_eq!(ds.skipped.len(), 2);
        assert_eq!(ds.instances[0].claim.date, NaiveDate::from_ymd_opt(2020, 8, 25));
        assert_eq!(ds.instances[0].claim.claimant.as_deref(), Some("X"));
    }

    #[test]
    fn empty_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(Benchmark::Averitec, dir.path()),
            Err(Error::DatasetNotFound(_))
        ));
        let p = write(dir.path(), "dev.json", "");
        assert!(matches!(
            load_dataset(Benchmark::Averitec, &p),
            Err(Error::SchemaMismatch(_))
        ));
        let p = write(dir.path(), "Corpus2.csv", "");
        assert!(matches!(
            load_dataset(Benchmark::Mocheg, &p),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn mocheg_dedups_and_filters_rulings() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "Corpus2.csv",
            "claim_id,Claim,cleaned_truthfulness,ruling_outline,Evidence\n\
             1,First,supported,ok,e1\n1,First,supported,ok,e2\n2,Second,refuted,,e\n3,Third,NEI,r,e\n",
        );
        let ds = load_dataset(Benchmark::Mocheg, &p).unwrap();
        assert_eq!(
            ds.instances.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(),
            ["1", "3"]
        );
        write(dir.path(), "mocheg_ids.txt", "2\n");
        let ds = load_dataset(Benchmark::Mocheg, &p).unwrap();
        assert_eq!(ds.instances[0].gold, "refuted");
    }

    #[test]
    fn verite_attaches_images_and_drops_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("images")).unwrap();
        std::fs::write(dir.path().join("images/a.png"), fake_png(1)).unwrap();
        let p = write(
            dir.path(),
            "VERITE.csv",
            ",caption,image_path,label\n0,A bus,images/a.png,out-of-context\n1,,images/a.png,true\n2,B,images/missing.png,true\n",
        );
        let ds = load_dataset(Benchmark::Verite, &p).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.skipped.len(), 2);
        let inst = &ds.instances[0];
        assert_eq!(inst.gold, "ooc");
        assert_eq!(inst.claim.image_ids(), [MediaId(1)]);
        assert_eq!(inst.registry().unwrap().len(), 1);
    }

    #[test]
    fn claimreview_maps_raw_ratings() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.png"), fake_png(3)).unwrap();
        let p = write(
            dir.path(),
            "claims.json",
            r#"[{"id":"a","text":"T","label":"Missing context","claimant":"C","date":"2024-05-01","image":"x.png"},
                {"id":"b","text":"U","label":"nei"},
                {"id":"c","text":"V","label":"pants on fire!!"}]"#,
        );
        let ds = load_dataset(Benchmark::Claimreview, &p).unwrap();
        assert_eq!(ds.counts_of(&["misleading", "nei"]), [1, 1]);
        assert_eq!(ds.skipped.len(), 1);
        assert_eq!(ds.instances[0].claim.image_ids(), [MediaId(1)]);
        assert_eq!(ds.instances[0].claim.date, NaiveDate::from_ymd_opt(2024, 5, 1));
    }
}
