//! Reading, writing and generating blocks.

mod bal;
mod generate;
mod native;

pub use bal::{parse_bal, read_bal, write_bal};
pub use generate::{generate, mean_reprojection_error, random_block, GeneratedBlock, GeneratorSpec, OutlierSpec, FOCAL_PX, IMAGE_PX};
pub use native::{parse_native, read_native, to_native_string, write_native, NATIVE_VERSION};

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Block;

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a native or a bundle-adjustment-in-the-large file, told apart by
/// the first token.
pub fn read_block(path: impl AsRef<Path>) -> Result<Block> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = std::io::BufReader::new(file);
    let starts_native = {
        let buf = reader.fill_buf().map_err(|e| Error::io(path, e))?;
        buf.starts_with(b"RPBA")
    };
    if starts_native {
        native::parse_native(reader)
    } else {
        bal::parse_bal(reader)
    }
}

/// Per-observation weight size: mean of the diagonal of the 2×2 information.
fn weight_size(w: &nalgebra::Matrix2<f64>) -> f64 {
    0.5 * w.trace()
}

/// Scales all weights by one factor so their mean size is 1.
pub fn normalize_weights(block: &mut Block) {
    let used: Vec<usize> = (0..block.observations.len()).filter(|&k| block.is_used(k)).collect();
    if used.is_empty() {
        return;
    }
    let mean = used.iter().map(|&k| weight_size(&block.observations[k].weight)).sum::<f64>() / used.len() as f64;
    if mean > 0.0 && mean.is_finite() {
        for o in &mut block.observations {
            o.weight /= mean;
        }
    }
}

/// Mean weight size over used observations.
pub fn mean_weight(block: &Block) -> f64 {
    let used: Vec<usize> = (0..block.observations.len()).filter(|&k| block.is_used(k)).collect();
    used.iter().map(|&k| weight_size(&block.observations[k].weight)).sum::<f64>() / used.len().max(1) as f64
}

/// Partition exchange file: one `camera_index sub_block_id` pair per line.
pub fn write_assignment(assignment: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::new();
    for (i, l) in assignment.iter().enumerate() {
        s.push_str(&format!("{i} {l}\n"));
    }
    write_atomic(path.as_ref(), s.as_bytes())
}

pub fn read_assignment(path: impl AsRef<Path>, cameras: usize) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_assignment(&text, cameras)
}

pub fn parse_assignment(text: &str, cameras: usize) -> Result<Vec<usize>> {
    let mut out = vec![None; cameras];
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [c, l] = fields[..] else {
            return Err(Error::parse(n + 1, "expected 'camera_index sub_block_id'"));
        };
        let c: usize = c.parse().map_err(|_| Error::parse(n + 1, "invalid camera index"))?;
        let l: usize = l.parse().map_err(|_| Error::parse(n + 1, "invalid sub-block id"))?;
        if c >= cameras {
            return Err(Error::IndexOutOfRange {
                what: "camera",
                index: c,
                count: cameras,
            });
        }
        out[c] = Some(l);
    }
    out.iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::parse(text.lines().count() + 1, format!("camera {i} has no sub-block"))))
        .collect()
}
