//! One line per delivered message for operators watching a topic.

use serde::{Deserialize, Serialize};

use crate::agent::Delivery;
use crate::wire::ChunkInfo;

pub const HEX_PREVIEW_BYTES: usize = 32;
pub const TEXT_PREVIEW_CHARS: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreviewFormat {
    #[default]
    Utf8,
    Hex,
}

impl std::str::FromStr for PreviewFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "utf8" | "text" => Ok(PreviewFormat::Utf8),
            "hex" => Ok(PreviewFormat::Hex),
            other => Err(format!("unknown preview format {other:?} (expected utf8 or hex)")),
        }
    }
}

pub fn preview(payload: &[u8], format: PreviewFormat) -> String {
    match format {
        PreviewFormat::Hex => payload.iter().take(HEX_PREVIEW_BYTES).map(|b| format!("{b:02x}")).collect(),
        PreviewFormat::Utf8 => {
            let text = String::from_utf8_lossy(&payload[..payload.len().min(TEXT_PREVIEW_CHARS * 4)]);
            let mut out: String = text.chars().take(TEXT_PREVIEW_CHARS).flat_map(char::escape_debug).collect();
            if text.chars().count() > TEXT_PREVIEW_CHARS || payload.len() > TEXT_PREVIEW_CHARS * 4 {
                out.push_str("...");
            }
            out
        }
    }
}

/// `offset partition ts size preview`, tab separated; chunk parts are marked.
pub fn format_line(d: &Delivery, format: PreviewFormat) -> String {
    let m = &d.message;
    let mut line = format!("{}\t{}\t{}\t{}\t{}", d.offset, d.partition, m.ts_pub, m.payload.len(), preview(&m.payload, format));
    if let Ok(Some(c)) = ChunkInfo::from_message(m) {
        line.push_str(&format!("\t[chunk {}/{} of {}]", c.index + 1, c.count, c.id));
    }
    line
}
