//! File formats: the canonical manifest, proposal CSV and naming-record stream.

mod lvlm;
mod manifest;
mod proposals;

pub use lvlm::{crop_name, parse_lvlm_record, read_lvlm_jsonl, write_lvlm_jsonl, AutoLabelRecord, LvlmLine, UNRECOGNIZED};
pub use manifest::{import_coco, manifest_to_bytes, read_manifest, read_manifest_bytes, write_manifest, SCHEMA_VERSION};
pub use proposals::{parse_proposals, serialize_proposals, RoiProposal, PROPOSAL_HEADER};
