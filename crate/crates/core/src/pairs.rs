//! Match / Blank / Mismatch preference pairs.
//!
//! Every source sample could yield one pair of each category. The builder
//! keeps every Match pair and subsamples Blank and Mismatch so the output
//! realizes a 40/30/30 split of `round(2.5 * n)` pairs.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::toolchain::assemble_candidate;
use crate::verilog::{parse_header, ModuleHeader, VerilogError};

pub const HEADER_SLOT: &str = "{module_header}";

pub const PROMPT_TEMPLATE: &str = "Please write a Verilog module based on the provided circuit diagram image. \
Return only the Verilog code, without any explanation.

For example:
```verilog
your Verilog code here
```

Module header (must not be changed):
{module_header}";

pub const REFUSAL_TEMPLATE: &str = "Based on the provided circuit diagram, I cannot accurately determine the Verilog implementation.

The module header provided is:
{module_header}

However, the provided image does not match the given module header, so I cannot generate the correct Verilog code with confidence.";

pub const DEFAULT_BLANK_WIDTH: u32 = 640;
pub const DEFAULT_BLANK_HEIGHT: u32 = 480;

#[derive(Debug, thiserror::Error)]
pub enum PairsError {
    #[error("sample `{id}` has an invalid header: {source}")]
    Header { id: String, source: VerilogError },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("mismatch pairs need at least two source samples, got {0}")]
    NoUnrelatedDiagram(usize),
    #[error("blank image dimensions must be >= 1, got {width}x{height}")]
    ZeroDimension { width: u32, height: u32 },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn render_prompt(header: &ModuleHeader) -> String {
    PROMPT_TEMPLATE.replace(HEADER_SLOT, &header.raw_text)
}

pub fn render_refusal(header: &ModuleHeader) -> String {
    REFUSAL_TEMPLATE.replace(HEADER_SLOT, &header.raw_text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Match,
    Blank,
    Mismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageKind {
    Original,
    Blank,
    Unrelated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    /// Sample whose diagram this is; `None` for the blank image.
    pub sample_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub sample_id: String,
    pub category: Category,
    pub image_ref: ImageRef,
    pub image_kind: ImageKind,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

/// One line of an alignment manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignRecord {
    pub id: String,
    /// Module header text.
    pub header: String,
    /// Reference implementation: the module body, or the full module.
    pub reference: String,
    /// Path of the rendered diagram.
    pub diagram: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioPlan {
    pub n_match: usize,
    pub n_blank: usize,
    pub n_mismatch: usize,
}

impl RatioPlan {
    pub fn total(&self) -> usize {
        self.n_match + self.n_blank + self.n_mismatch
    }
}

/// `round(2.5 n)` pairs split 4:3:3 by largest remainder, ties going to
/// Match, then Blank, then Mismatch. Exact integer arithmetic throughout.
pub fn plan_ratio(n_source: usize) -> RatioPlan {
    let total = (5 * n_source).div_ceil(2);
    let weights = [4usize, 3, 3];
    let mut counts = weights.map(|w| w * total / 10);
    let remainders = weights.map(|w| w * total % 10);
    let mut leftover = total - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(a.cmp(&b)));
    for &i in &order {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    RatioPlan {
        n_match: counts[0],
        n_blank: counts[1],
        n_mismatch: counts[2],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildOptions {
    pub seed: u64,
    /// Path recorded as the image of every Blank pair.
    pub blank_image: String,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            blank_image: "blank.ppm".into(),
        }
    }
}

fn fence(code: &str) -> String {
    let mut s = String::from("```verilog\n");
    s.push_str(code);
    if !code.ends_with('\n') {
        s.push('\n');
    }
    s.push_str("```");
    s
}

/// `count` indices out of `0..n` in ascending order: a subsample without
/// replacement when `count <= n`, otherwise every index repeated round-robin.
fn pick(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    if count <= n {
        let mut idx = sample_indices(rng, n, count).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..count).map(|i| i % n).collect()
    }
}

/// Build the pairs for `records`. Output is grouped Match, Blank, Mismatch,
/// each in manifest order, and is a pure function of `(records, options)`.
pub fn build_pairs(records: &[AlignRecord], options: &BuildOptions) -> Result<Vec<PreferencePair>, PairsError> {
    let mut seen = HashSet::new();
    let mut headers = Vec::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(PairsError::DuplicateId(r.id.clone()));
        }
        headers.push(parse_header(&r.header).map_err(|source| PairsError::Header {
            id: r.id.clone(),
            source,
        })?);
    }
    let n = records.len();
    let plan = plan_ratio(n);
    if plan.n_mismatch > 0 && n < 2 {
        return Err(PairsError::NoUnrelatedDiagram(n));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let match_idx: Vec<usize> = (0..plan.n_match).map(|i| i % n.max(1)).collect();
    let blank_idx = pick(&mut rng, n, plan.n_blank);
    let mismatch_idx = pick(&mut rng, n, plan.n_mismatch);

    let code = |i: usize| fence(&assemble_candidate(&records[i].header, &records[i].reference));
    let mut out = Vec::with_capacity(plan.total());
    for &i in &match_idx {
        out.push(PreferencePair {
            sample_id: records[i].id.clone(),
            category: Category::Match,
            image_ref: ImageRef {
                path: records[i].diagram.clone(),
                sample_id: Some(records[i].id.clone()),
            },
            image_kind: ImageKind::Original,
            prompt: render_prompt(&headers[i]),
            chosen: code(i),
            rejected: render_refusal(&headers[i]),
        });
    }
    for &i in &blank_idx {
        out.push(PreferencePair {
            sample_id: records[i].id.clone(),
            category: Category::Blank,
            image_ref: ImageRef {
                path: options.blank_image.clone(),
                sample_id: None,
            },
            image_kind: ImageKind::Blank,
            prompt: render_prompt(&headers[i]),
            chosen: render_refusal(&headers[i]),
            rejected: code(i),
        });
    }
    for &i in &mismatch_idx {
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        out.push(PreferencePair {
            sample_id: records[i].id.clone(),
            category: Category::Mismatch,
            image_ref: ImageRef {
                path: records[j].diagram.clone(),
                sample_id: Some(records[j].id.clone()),
            },
            image_kind: ImageKind::Unrelated,
            prompt: render_prompt(&headers[i]),
            chosen: render_refusal(&headers[i]),
            rejected: code(i),
        });
    }
    Ok(out)
}

/// White P6 pixmap.
pub fn make_blank_image(width: u32, height: u32) -> Result<Vec<u8>, PairsError> {
    if width == 0 || height == 0 {
        return Err(PairsError::ZeroDimension { width, height });
    }
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.resize(bytes.len() + 3 * width as usize * height as usize, 0xFF);
    Ok(bytes)
}

pub fn write_blank_image(path: &Path, width: u32, height: u32) -> Result<(), PairsError> {
    fs::write(path, make_blank_image(width, height)?)?;
    Ok(())
}
