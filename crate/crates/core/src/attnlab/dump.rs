//! Tensor-dump container.
//!
//! Layout: magic `PLGD`, an 8-byte little-endian header length, a UTF-8 JSON
//! header, then the payload: row-major little-endian `f32` sections at the
//! byte offsets listed in the header.
//!
//! | section      | shape          | required |
//! |--------------|----------------|----------|
//! | `enc_attn`   | `[L, H, S, S]` | yes      |
//! | `hidden`     | `[L+1, S, d]`  | yes      |
//! | `cross_attn` | `[L, H, T, S]` | no (needs `out_tokens` of length T) |
//! | `head_sens`  | `[L, H]`       | no       |

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textmatch::lemmatize;

pub const MAGIC: &[u8; 4] = b"PLGD";
/// Tolerance on attention row sums.
pub const ROW_SUM_TOL: f64 = 1e-4;

const ENC_ATTN: &str = "enc_attn";
const HIDDEN: &str = "hidden";
const CROSS_ATTN: &str = "cross_attn";
const HEAD_SENS: &str = "head_sens";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DumpError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("truncated container: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{section} layer {layer} head {head} row {row} sums to {sum}")]
    RowSum {
        section: &'static str,
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
    },
    #[error("{section} contains a negative or non-finite entry")]
    BadEntry { section: &'static str },
    #[error("concept {0:?} not found among the dump tokens")]
    MissingConcept(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SectionInfo {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    instance_id: String,
    plan: Vec<String>,
    tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out_tokens: Option<Vec<String>>,
    layers: usize,
    heads: usize,
    seq: usize,
    dim: usize,
    sections: Vec<SectionInfo>,
    loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttention {
    pub out_tokens: Vec<String>,
    /// `[L, H, T, S]`
    pub values: Vec<f32>,
}

/// Tensors dumped for one permutation of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    pub instance_id: String,
    pub plan: Vec<String>,
    pub tokens: Vec<String>,
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    /// `[L, H, S, S]`
    pub enc_attn: Vec<f32>,
    /// `[L+1, S, d]`
    pub hidden: Vec<f32>,
    pub cross_attn: Option<CrossAttention>,
    /// `[L, H]`
    pub head_sens: Option<Vec<f32>>,
    pub loss: Option<f64>,
}

impl AttentionDump {
    /// A dump whose tokens are exactly the plan, with uniform attention
    /// rows and zero hidden states.
    pub fn uniform(instance_id: &str, plan: &[String], layers: usize, heads: usize, dim: usize) -> Self {
        let s = plan.len();
        AttentionDump {
            instance_id: instance_id.into(),
            plan: plan.to_vec(),
            tokens: plan.to_vec(),
            layers,
            heads,
            dim,
            enc_attn: vec![1.0 / s as f32; layers * heads * s * s],
            hidden: vec![0.0; (layers + 1) * s * dim],
            cross_attn: None,
            head_sens: None,
            loss: None,
        }
    }

    pub fn seq(&self) -> usize {
        self.tokens.len()
    }

    pub fn out_len(&self) -> usize {
        self.cross_attn.as_ref().map_or(0, |c| c.out_tokens.len())
    }

    /// Row `row` of the encoder attention for (layer, head).
    pub fn attn_row(&self, layer: usize, head: usize, row: usize) -> &[f32] {
        let s = self.seq();
        let start = ((layer * self.heads + head) * s + row) * s;
        &self.enc_attn[start..start + s]
    }

    pub fn attn(&self, layer: usize, head: usize, from: usize, to: usize) -> f32 {
        self.attn_row(layer, head, from)[to]
    }

    /// Hidden state at `pos`; layer 0 is the embedding output.
    pub fn hidden_at(&self, layer: usize, pos: usize) -> &[f32] {
        let start = (layer * self.seq() + pos) * self.dim;
        &self.hidden[start..start + self.dim]
    }

    pub fn cross_row(&self, layer: usize, head: usize, step: usize) -> Option<&[f32]> {
        let cross = self.cross_attn.as_ref()?;
        let s = self.seq();
        let t = cross.out_tokens.len();
        let start = ((layer * self.heads + head) * t + step) * s;
        Some(&cross.values[start..start + s])
    }

    pub fn sensitivity(&self, layer: usize, head: usize) -> Option<f32> {
        self.head_sens.as_ref().map(|s| s[layer * self.heads + head])
    }

    /// Checks shapes, row-stochasticity and concept presence.
    pub fn validate(&self) -> Result<(), DumpError> {
        let (l, h, s, d) = (self.layers, self.heads, self.seq(), self.dim);
        if l == 0 || h == 0 || s == 0 {
            return Err(DumpError::Shape("layers, heads and seq must be positive".into()));
        }
        if self.enc_attn.len() != l * h * s * s {
            return Err(DumpError::Shape(format!(
                "{ENC_ATTN} has {} values",
                self.enc_attn.len()
            )));
        }
        if self.hidden.len() != (l + 1) * s * d {
            return Err(DumpError::Shape(format!("{HIDDEN} has {} values", self.hidden.len())));
        }
        check_stochastic(ENC_ATTN, &self.enc_attn, h, s, s)?;
        if let Some(cross) = &self.cross_attn {
            let t = cross.out_tokens.len();
            if cross.values.len() != l * h * t * s {
                return Err(DumpError::Shape(format!(
                    "{CROSS_ATTN} has {} values",
                    cross.values.len()
                )));
            }
            check_stochastic(CROSS_ATTN, &cross.values, h, t, s)?;
        }
        if let Some(sens) = &self.head_sens {
            if sens.len() != l * h {
                return Err(DumpError::Shape(format!("{HEAD_SENS} has {} values", sens.len())));
            }
            if sens.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(DumpError::BadEntry { section: HEAD_SENS });
            }
        }
        if self.hidden.iter().any(|v| !v.is_finite()) {
            return Err(DumpError::BadEntry { section: HIDDEN });
        }
        if self.plan.is_empty() {
            return Err(DumpError::Header("empty plan".into()));
        }
        let mut seen = HashSet::new();
        if !self.plan.iter().all(|c| seen.insert(c)) {
            return Err(DumpError::Header("plan repeats a concept".into()));
        }
        let lemmas: HashSet<String> = self.tokens.iter().map(|t| lemmatize(t)).collect();
        for concept in &self.plan {
            if !lemmas.contains(&lemmatize(concept)) {
                return Err(DumpError::MissingConcept(concept.clone()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (l, h, s, d) = (self.layers, self.heads, self.seq(), self.dim);
        let mut sections = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut push = |name: &str, shape: Vec<usize>, data: &[f32]| {
            sections.push(SectionInfo {
                name: name.into(),
                shape,
                offset: payload.len(),
            });
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        push(ENC_ATTN, vec![l, h, s, s], &self.enc_attn);
        push(HIDDEN, vec![l + 1, s, d], &self.hidden);
        if let Some(cross) = &self.cross_attn {
            push(CROSS_ATTN, vec![l, h, cross.out_tokens.len(), s], &cross.values);
        }
        if let Some(sens) = &self.head_sens {
            push(HEAD_SENS, vec![l, h], sens);
        }
        let header = Header {
            instance_id: self.instance_id.clone(),
            plan: self.plan.clone(),
            tokens: self.tokens.clone(),
            out_tokens: self.cross_attn.as_ref().map(|c| c.out_tokens.clone()),
            layers: l,
            heads: h,
            seq: s,
            dim: d,
            sections,
            loss: self.loss,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DumpError> {
        load_dump(bytes)
    }
}

fn check_stochastic(
    section: &'static str,
    values: &[f32],
    heads: usize,
    rows: usize,
    cols: usize,
) -> Result<(), DumpError> {
    if cols == 0 {
        return Ok(());
    }
    for (r, row) in values.chunks_exact(cols).enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DumpError::BadEntry { section });
        }
        let sum: f64 = row.iter().map(|&v| v as f64).sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            let matrix = r / rows.max(1);
            return Err(DumpError::RowSum {
                section,
                layer: matrix / heads,
                head: matrix % heads,
                row: r % rows.max(1),
                sum,
            });
        }
    }
    Ok(())
}

fn read_section(payload: &[u8], offset: usize, count: usize) -> Result<Vec<f32>, DumpError> {
    let end = offset + count * 4;
    if end > payload.len() {
        return Err(DumpError::Truncated {
            expected: end,
            actual: payload.len(),
        });
    }
    Ok(payload[offset..end]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Parses and validates a dump container.
pub fn load_dump(bytes: &[u8]) -> Result<AttentionDump, DumpError> {
    if bytes.len() < 4 {
        return Err(DumpError::Truncated {
            expected: 12,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(DumpError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(DumpError::Truncated {
            expected: 12,
            actual: bytes.len(),
        });
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| DumpError::Header("header length overflows".into()))?;
    if header_end > bytes.len() {
        return Err(DumpError::Truncated {
            expected: header_end,
            actual: bytes.len(),
        });
    }
    let header: Header =
        serde_json::from_slice(&bytes[12..header_end]).map_err(|e| DumpError::Header(e.to_string()))?;
    let payload = &bytes[header_end..];
    let (l, h, s, d) = (header.layers, header.heads, header.seq, header.dim);
    if header.tokens.len() != s {
        return Err(DumpError::Shape(format!("{} tokens for seq {s}", header.tokens.len())));
    }

    let mut enc_attn = None;
    let mut hidden = None;
    let mut cross = None;
    let mut sens = None;
    let mut end = 0usize;
    for sec in &header.sections {
        let expected: Vec<usize> = match sec.name.as_str() {
            ENC_ATTN => vec![l, h, s, s],
            HIDDEN => vec![l + 1, s, d],
            CROSS_ATTN => {
                let t = header
                    .out_tokens
                    .as_ref()
                    .ok_or_else(|| DumpError::Header("cross_attn without out_tokens".into()))?
                    .len();
                vec![l, h, t, s]
            }
            HEAD_SENS => vec![l, h],
            other => return Err(DumpError::Header(format!("unknown section {other:?}"))),
        };
        if sec.shape != expected {
            return Err(DumpError::Shape(format!(
                "{} has shape {:?}, expected {:?}",
                sec.name, sec.shape, expected
            )));
        }
        let count: usize = expected.iter().product();
        let data = read_section(payload, sec.offset, count)?;
        end = end.max(sec.offset + count * 4);
        let slot = match sec.name.as_str() {
            ENC_ATTN => &mut enc_attn,
            HIDDEN => &mut hidden,
            CROSS_ATTN => &mut cross,
            _ => &mut sens,
        };
        if slot.replace(data).is_some() {
            return Err(DumpError::Header(format!("duplicate section {:?}", sec.name)));
        }
    }
    if end != payload.len() {
        return Err(DumpError::Shape(format!(
            "payload has {} bytes, sections cover {end}",
            payload.len()
        )));
    }
    let enc_attn = enc_attn.ok_or_else(|| DumpError::Header("missing enc_attn".into()))?;
    let hidden = hidden.ok_or_else(|| DumpError::Header("missing hidden".into()))?;
    if header.out_tokens.is_some() && cross.is_none() {
        return Err(DumpError::Header("out_tokens without cross_attn".into()));
    }
    let dump = AttentionDump {
        instance_id: header.instance_id,
        plan: header.plan,
        tokens: header.tokens,
        layers: l,
        heads: h,
        dim: d,
        enc_attn,
        hidden,
        cross_attn: cross.map(|values| CrossAttention {
            out_tokens: header.out_tokens.unwrap_or_default(),
            values,
        }),
        head_sens: sens,
        loss: header.loss,
    };
    dump.validate()?;
    Ok(dump)
}


#[cfg(test)]
mod tests {
    use super::fixtures::uniform_dump;
    use super::*;

    fn toy() -> AttentionDump {
        let mut d = uniform_dump("i1", &["dog", "catch", "frisbee", "</s>"], 2, 2, 3);
        d.plan = vec!["dog".into(), "catch".into(), "frisbee".into()];
        d.hidden.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 0.5);
        d.head_sens = Some(vec![0.1, 0.2, 0.3, 0.4]);
        d.loss = Some(2.5);
        d.cross_attn = Some(CrossAttention {
            out_tokens: vec!["a".into(), "dog".into()],
            values: vec![0.25; 2 * 2 * 2 * 4],
        });
        d
    }

    #[test]
    fn loads_well_formed() {
        let d = toy();
        let bytes = d.to_bytes();
        assert_eq!(&bytes[..4], b"PLGD");
        let back = load_dump(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_bad_row_sum() {
        let mut d = toy();
        for v in &mut d.enc_attn[4..8] {
            *v = 0.2;
        }
        let err = load_dump(&d.to_bytes()).unwrap_err();
        assert!(
            matches!(
                err,
                DumpError::RowSum {
                    section: "enc_attn",
                    layer: 0,
                    head: 0,
                    row: 1,
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn rejects_truncated_payload() {
        let bytes = toy().to_bytes();
        let err = load_dump(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, DumpError::Truncated { .. }), "{err:?}");
        assert!(matches!(load_dump(&bytes[..8]), Err(DumpError::Truncated { .. })));
    }

    #[test]
    fn rejects_corrupt_headers() {
        let mut bytes = toy().to_bytes();
        bytes[0] = b'X';
        assert_eq!(load_dump(&bytes), Err(DumpError::BadMagic));

        let mut bytes = toy().to_bytes();
        bytes[13] = b'!';
        assert!(matches!(load_dump(&bytes), Err(DumpError::Header(_))));

        let mut bytes = toy().to_bytes();
        bytes[4..12].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(load_dump(&bytes).is_err());
    }

    #[test]
    fn rejects_missing_concept() {
        let mut d = toy();
        d.plan.push("ball".into());
        assert_eq!(load_dump(&d.to_bytes()), Err(DumpError::MissingConcept("ball".into())));
    }
}
