use serde::Serialize;

use crate::student::{forward_train_with_attention, StudentConfig, StudentParams};
use crate::{ArdError, Result};

/// `scores[layer][j][i]`: share of the attention of query block `j` (step
/// `S − j`) that lands on input block `i ≤ j` (step `S − i`), averaged over
/// heads and query tokens. Each query token's shares are normalised to sum to one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionReport {
    pub steps: usize,
    pub scores: Vec<Vec<Vec<f64>>>,
}

impl AttentionReport {
    /// Score of input step `input` for the query at step `query` in `layer`.
    pub fn score(&self, layer: usize, query: usize, input: usize) -> f64 {
        let (j, i) = (self.steps - query, self.steps - input);
        if i > j {
            return 0.0;
        }
        self.scores[layer][j][i]
    }

    /// Mean of several reports of identical shape.
    pub fn average(reports: &[AttentionReport]) -> Result<AttentionReport> {
        let first = reports.first().ok_or_else(|| ArdError::dim("no reports to average"))?;
        let mut out = first.clone();
        for r in &reports[1..] {
            if r.steps != first.steps || r.scores.len() != first.scores.len() {
                return Err(ArdError::dim("attention reports differ in shape"));
            }
            for (a, b) in out.scores.iter_mut().flatten().flatten().zip(r.scores.iter().flatten().flatten()) {
                *a += b;
            }
        }
        let n = reports.len() as f64;
        out.scores.iter_mut().flatten().flatten().for_each(|v| *v /= n);
        Ok(out)
    }

    /// Rows `layer,query_step,input_step,score`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,query_step,input_step,score\n");
        for (l, layer) in self.scores.iter().enumerate() {
            for (j, row) in layer.iter().enumerate() {
                for (i, v) in row.iter().enumerate() {
                    s.push_str(&format!("{l},{},{},{v:.8}\n", self.steps - j, self.steps - i));
                }
            }
        }
        s
    }
}

/// Attention shares per input block for one teacher-forced trajectory.
pub fn attention_report(
    params: &StudentParams,
    cfg: &StudentConfig,
    inputs: &[&[f32]],
    class: usize,
) -> Result<AttentionReport> {
    let (_, attn) = forward_train_with_attention(params, cfg, inputs, class)?;
    let tok = cfg.tokens();
    let s_total = cfg.steps;
    let width = s_total * tok;
    let norm = (cfg.heads * tok) as f64;
    let scores = attn
        .iter()
        .map(|heads| {
            (0..s_total)
                .map(|j| {
                    let mut row = vec![0.0; j + 1];
                    for h in heads {
                        let p = h.data();
                        for q in j * tok..(j + 1) * tok {
                            let mass: Vec<f64> = (0..=j)
                                .map(|i| {
                                    p[q * width + i * tok..q * width + (i + 1) * tok].iter().map(|&v| v as f64).sum()
                                })
                                .collect();
                            let total: f64 = mass.iter().sum();
                            for (r, m) in row.iter_mut().zip(&mass) {
                                *r += m / total;
                            }
                        }
                    }
                    row.iter_mut().for_each(|v| *v /= norm);
                    row
                })
                .collect()
        })
        .collect();
    Ok(AttentionReport { steps: s_total, scores })
}
