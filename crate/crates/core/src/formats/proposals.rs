//! Region-proposal CSV, as written by the automatic mask generator's metadata dump.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::domain::BBox;
use crate::error::{Error, Result};

pub const PROPOSAL_HEADER: [&str; 14] = [
    "id",
    "area",
    "bbox_x0",
    "bbox_y0",
    "bbox_w",
    "bbox_h",
    "point_input_x",
    "point_input_y",
    "predicted_iou",
    "stability_score",
    "crop_box_x0",
    "crop_box_y0",
    "crop_box_w",
    "crop_box_h",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiProposal {
    pub id: u64,
    pub area: u64,
    pub bbox: BBox,
    pub point_input_x: f64,
    pub point_input_y: f64,
    pub predicted_iou: f64,
    pub stability_score: f64,
    pub crop_box: BBox,
}

impl RoiProposal {
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        self.crop_box.validate()?;
        for (name, v) in [("predicted_iou", self.predicted_iou), ("stability_score", self.stability_score)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("proposal {} {name} {v} outside [0, 1]", self.id)));
            }
        }
        Ok(())
    }
}

fn parse_f64(row: usize, column: usize, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::NonNumericField {
            row,
            column: PROPOSAL_HEADER[column].to_owned(),
            value: value.to_owned(),
        })
}

fn parse_u64(row: usize, column: usize, value: &str) -> Result<u64> {
    value.parse::<u64>().map_err(|_| Error::NonNumericField {
        row,
        column: PROPOSAL_HEADER[column].to_owned(),
        value: value.to_owned(),
    })
}

/// Parses the proposal CSV. The header must match [`PROPOSAL_HEADER`] exactly.
pub fn parse_proposals<R: Read>(reader: R) -> Result<Vec<RoiProposal>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => {
            return Err(Error::HeaderMismatch {
                expected: PROPOSAL_HEADER.join(","),
                found: String::new(),
            })
        }
    };
    if header.iter().ne(PROPOSAL_HEADER.iter().copied()) {
        return Err(Error::HeaderMismatch {
            expected: PROPOSAL_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut out = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != PROPOSAL_HEADER.len() {
            return Err(Error::RowArity {
                row,
                expected: PROPOSAL_HEADER.len(),
                found: rec.len(),
            });
        }
        let f = |c: usize| parse_f64(row, c, &rec[c]);
        let proposal = RoiProposal {
            id: parse_u64(row, 0, &rec[0])?,
            area: parse_u64(row, 1, &rec[1])?,
            bbox: BBox::new(f(2)?, f(3)?, f(4)?, f(5)?),
            point_input_x: f(6)?,
            point_input_y: f(7)?,
            predicted_iou: f(8)?,
            stability_score: f(9)?,
            crop_box: BBox::new(f(10)?, f(11)?, f(12)?, f(13)?),
        };
        proposal.validate()?;
        out.push(proposal);
    }
    Ok(out)
}

/// Writes proposals with the exact header; floats use shortest round-trip formatting.
pub fn serialize_proposals(proposals: &[RoiProposal]) -> String {
    let mut out = PROPOSAL_HEADER.join(",");
    out.push('\n');
    for p in proposals {
        let fields = [
            p.id.to_string(),
            p.area.to_string(),
            p.bbox.x.to_string(),
            p.bbox.y.to_string(),
            p.bbox.w.to_string(),
            p.bbox.h.to_string(),
            p.point_input_x.to_string(),
            p.point_input_y.to_string(),
            p.predicted_iou.to_string(),
            p.stability_score.to_string(),
            p.crop_box.x.to_string(),
            p.crop_box.y.to_string(),
            p.crop_box.w.to_string(),
            p.crop_box.h.to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "id,area,bbox_x0,bbox_y0,bbox_w,bbox_h,point_input_x,point_input_y,predicted_iou,stability_score,crop_box_x0,crop_box_y0,crop_box_w,crop_box_h
0,1939,161,210,62,45,197.21875,229.28125,0.9753,0.9574,85,85,171,171
4,60,185,135,6,8,186.53125,143.78125,0.9605,1.0000,85,85,171,171
";

    #[test]
    fn parses_sample_rows() {
        let ps = parse_proposals(SAMPLE.as_bytes()).unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[0].id, 0);
        assert_eq!(ps[0].area, 1939);
        assert_eq!(ps[0].bbox, BBox::new(161.0, 210.0, 62.0, 45.0));
        assert_eq!(ps[0].predicted_iou, 0.9753);
        assert_eq!(ps[1].area, 60);
        assert_eq!(ps[1].stability_score, 1.0);
    }

    #[test]
    fn reordered_header_is_rejected() {
        let bad = SAMPLE.replacen("id,area", "area,id", 1);
        assert!(matches!(parse_proposals(bad.as_bytes()), Err(Error::HeaderMismatch { .. })));
        assert!(matches!(parse_proposals(&b""[..]), Err(Error::HeaderMismatch { .. })));
    }

    #[test]
    fn short_row_is_rejected() {
        let bad = format!("{}1,2,3\n", SAMPLE);
        assert!(matches!(parse_proposals(bad.as_bytes()), Err(Error::RowArity { row: 3, found: 3, .. })));
    }

    #[test]
    fn non_numeric_is_rejected() {
        let bad = SAMPLE.replace("0.9753", "high");
        match parse_proposals(bad.as_bytes()) {
            Err(Error::NonNumericField { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "predicted_iou");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    prop_compose! {
        fn arb_proposal()(id in 0u64..10_000, area in 0u64..1_000_000,
                          b in prop::array::uniform4(0.0..2048.0f64),
                          c in prop::array::uniform4(0.0..2048.0f64),
                          px in -1e4..1e4f64, py in -1e4..1e4f64,
                          iou in 0.0..=1.0f64, stab in 0.0..=1.0f64) -> RoiProposal {
            RoiProposal { id, area, bbox: b.into(), point_input_x: px, point_input_y: py,
                          predicted_iou: iou, stability_score: stab, crop_box: c.into() }
        }
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(ps in prop::collection::vec(arb_proposal(), 0..20)) {
            let text = serialize_proposals(&ps);
            prop_assert_eq!(parse_proposals(text.as_bytes()).unwrap(), ps);
        }
    }
}
