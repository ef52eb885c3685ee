//! Naming-service records: the raw model answer plus what we could read out of it.
//!
//! Only `det_name` and `text` are trusted on input. The category is the first
//! double-quoted phrase and the likelihood is the first number after "likelihood of"
//! that follows it. Anything that does not fit degrades to an unparseable record.

use std::io::{BufRead, Write};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::{canonicalize_category, BBox};
use crate::error::Result;

/// Category word the naming prompt asks for when it cannot identify the crop.
pub const UNRECOGNIZED: &str = "Unrecognized";

static QUOTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#""([^"]*)""#).unwrap());
static LIKELIHOOD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)likelihood\s+of\s+(\d+(?:\.\d+)?|\.\d+)").unwrap());

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoLabelRecord {
    pub det_name: String,
    pub raw_text: String,
    /// Canonical category, `None` when the text held no usable quoted phrase.
    pub category: Option<String>,
    /// `None` when absent, unparseable or outside `[0, 1]`.
    pub likelihood: Option<f64>,
    pub unrecognized: bool,
}

impl AutoLabelRecord {
    pub fn unparseable(&self) -> bool {
        self.category.is_none()
    }
}

pub fn parse_lvlm_record(det_name: &str, text: &str) -> AutoLabelRecord {
    let mut record = AutoLabelRecord {
        det_name: det_name.to_owned(),
        raw_text: text.to_owned(),
        category: None,
        likelihood: None,
        unrecognized: false,
    };
    let Some(m) = QUOTED.captures(text) else {
        return record;
    };
    let phrase = m.get(1).map_or("", |g| g.as_str());
    let whole = m.get(0).expect("group 0 always present");
    record.category = canonicalize_category(phrase).ok();
    record.unrecognized = phrase == UNRECOGNIZED;
    record.likelihood = LIKELIHOOD
        .captures(&text[whole.end()..])
        .and_then(|c| c[1].parse::<f64>().ok())
        .filter(|v| (0.0..=1.0).contains(v));
    record
}

/// One line of the naming-record stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvlmLine {
    pub det_name: String,
    pub text: String,
}

/// Reads JSON-lines naming records; blank lines are skipped, extra fields ignored.
pub fn read_lvlm_jsonl<R: BufRead>(reader: R) -> Result<Vec<AutoLabelRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LvlmLine = serde_json::from_str(&line)?;
        out.push(parse_lvlm_record(&rec.det_name, &rec.text));
    }
    Ok(out)
}

pub fn write_lvlm_jsonl<W: Write>(records: &[AutoLabelRecord], mut writer: W) -> Result<()> {
    for r in records {
        let line = LvlmLine {
            det_name: r.det_name.clone(),
            text: r.raw_text.clone(),
        };
        serde_json::to_writer(&mut writer, &line)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Crop file name in the engine's convention:
/// `cropped_resized_<stem>_<x1>_<y1>_<x2>_<y2>_<cx>_<cy>.jpg`.
pub fn crop_name(image_stem: &str, bbox: &BBox) -> String {
    let (x2, y2) = (bbox.right(), bbox.bottom());
    format!(
        "cropped_resized_{image_stem}_{:.1}_{:.1}_{:.1}_{:.1}_{:.1}_{:.1}.jpg",
        bbox.x,
        bbox.y,
        x2,
        y2,
        (bbox.x + x2) / 2.0,
        (bbox.y + y2) / 2.0
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_road() {
        let r = parse_lvlm_record("d", "\"Road\" with a likelihood of 0.9. The image shows a paved surface.");
        assert_eq!(r.category.as_deref(), Some("road"));
        assert_eq!(r.likelihood, Some(0.9));
        assert!(!r.unrecognized);
    }

    #[test]
    fn parses_unrecognized() {
        let r = parse_lvlm_record("d", "\"Unrecognized\" with a likelihood of 0.8. Too blurry.");
        assert_eq!(r.category.as_deref(), Some("unrecognized"));
        assert_eq!(r.likelihood, Some(0.8));
        assert!(r.unrecognized);
    }

    #[test]
    fn integer_likelihood_before_sentence_stop() {
        let r = parse_lvlm_record("d", "\"Airport runway\" with a likelihood of 1. The image shows");
        assert_eq!(r.category.as_deref(), Some("airport runway"));
        assert_eq!(r.likelihood, Some(1.0));
    }

    #[test]
    fn missing_pieces_degrade() {
        let r = parse_lvlm_record("d", "I think this is a road.");
        assert!(r.unparseable());
        assert_eq!(r.likelihood, None);

        let r = parse_lvlm_record("d", "\"Road\" probably.");
        assert_eq!(r.category.as_deref(), Some("road"));
        assert_eq!(r.likelihood, None);

        let r = parse_lvlm_record("d", "\"Road\" with a likelihood of 7.");
        assert_eq!(r.likelihood, None);

        let r = parse_lvlm_record("d", "\"  \" with a likelihood of 0.5");
        assert!(r.unparseable());
    }

    #[test]
    fn likelihood_must_follow_the_phrase() {
        let r = parse_lvlm_record("d", "A likelihood of 0.2 for \"Ship\".");
        assert_eq!(r.category.as_deref(), Some("ship"));
        assert_eq!(r.likelihood, None);
    }

    #[test]
    fn crop_name_matches_engine_convention() {
        let b = BBox::from_corners(192.0, 0.0, 589.0, 79.0);
        assert_eq!(crop_name("image0", &b), "cropped_resized_image0_192.0_0.0_589.0_79.0_390.5_39.5.jpg");
    }

    #[test]
    fn jsonl_round_trip_ignores_derived_columns() {
        let input = "{\"det_name\":\"a.jpg\",\"text\":\"\\\"Road\\\" with a likelihood of 0.9.\",\"class\":\"Bogus\",\"likelihood\":-1}\n\n";
        let recs = read_lvlm_jsonl(input.as_bytes()).unwrap();
        assert_eq!(recs[0].category.as_deref(), Some("road"));
        let mut out = Vec::new();
        write_lvlm_jsonl(&recs, &mut out).unwrap();
        assert_eq!(read_lvlm_jsonl(out.as_slice()).unwrap(), recs);
    }

    proptest! {
        #[test]
        fn never_panics(text in "\\PC{0,200}") {
            let r = parse_lvlm_record("x", &text);
            if let Some(l) = r.likelihood {
                prop_assert!((0.0..=1.0).contains(&l));
            }
            if r.unrecognized {
                prop_assert_eq!(r.category.as_deref(), Some("unrecognized"));
            }
        }
    }
}
