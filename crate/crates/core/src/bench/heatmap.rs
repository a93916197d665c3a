use std::io::Write;

use serde::Serialize;

use super::BenchError;
use crate::moments::{l2_norm, MomentEmbedding};
use crate::retrieval::RetrievalError;

/// Pairwise cosine similarities, row-major `N x N`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatmapMatrix {
    pub ids: Vec<String>,
    pub values: Vec<f64>,
}

pub fn similarity_heatmap(embeddings: &[MomentEmbedding]) -> Result<HeatmapMatrix, BenchError> {
    if embeddings.len() < 2 {
        return Err(BenchError::InvalidParams(
            "a heatmap needs at least 2 embeddings".into(),
        ));
    }
    let first = &embeddings[0];
    let rows: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| {
            if e.config_digest != first.config_digest {
                return Err(RetrievalError::DigestMismatch {
                    video_id: e.video_id.clone(),
                    expected: first.config_digest.clone(),
                    found: e.config_digest.clone(),
                });
            }
            if e.dim() != first.dim() {
                return Err(RetrievalError::DimensionMismatch {
                    expected: first.dim(),
                    found: e.dim(),
                });
            }
            let norm = l2_norm(&e.vector);
            if norm == 0.0 {
                return Err(RetrievalError::ZeroVector(e.video_id.clone()));
            }
            Ok(e.vector.iter().map(|v| v / norm).collect())
        })
        .collect::<Result<_, _>>()?;

    let n = rows.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    Ok(HeatmapMatrix {
        ids: embeddings.iter().map(|e| e.video_id.clone()).collect(),
        values,
    })
}

impl HeatmapMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    /// Mean off-diagonal similarity within groups and across groups.
    pub fn group_means(&self, groups: &[usize]) -> (f64, f64) {
        let n = self.len();
        let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                if groups[i] == groups[j] {
                    within += self.get(i, j);
                    nw += 1;
                } else {
                    cross += self.get(i, j);
                    nc += 1;
                }
            }
        }
        (within / nw.max(1) as f64, cross / nc.max(1) as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for id in &self.ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            for j in 0..self.len() {
                out.push_str(&format!(",{:.6}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }

    /// Binary 8-bit PGM; similarity -1 maps to black, 1 to white.
    pub fn write_pgm<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        let n = self.len();
        write!(sink, "P5\n{n} {n}\n255\n")?;
        let pixels: Vec<u8> = self
            .values
            .iter()
            .map(|v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
            .collect();
        sink.write_all(&pixels)
    }
}
