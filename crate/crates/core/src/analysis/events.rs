//! How much attention lands on event patches. A token is an event patch for
//! a given window when its time span intersects any labeled event span; the
//! statistics split each query row's unit mass between event and non-event
//! keys.

use rand::Rng;

use crate::analysis::capture::AttentionCapture;
use crate::dataset::LabeledSeries;
use crate::error::{Error, Result};
use crate::rng::stream;

/// Event-mass statistics pooled over a capture. Head pooling is the
/// arithmetic mean over heads; per-head values are kept alongside.
#[derive(Clone, Debug)]
pub struct EventAttentionStats {
    pub blocks: usize,
    pub heads: usize,
    pub tokens: usize,
    pub sequences: usize,
    /// Mean event mass per (block, head), over all sequences and queries.
    pub per_head: Vec<Vec<f64>>,
    /// Head-pooled mean event mass per (block, query token).
    pub per_query_event: Vec<Vec<f64>>,
    /// Head-pooled mean non-event mass per (block, query token).
    pub per_query_nonevent: Vec<Vec<f64>>,
    /// Head-pooled mean event mass per block, over sequences and queries.
    pub pooled: Vec<f64>,
    /// 95% bootstrap interval (over sequences) for each block's pooled mass.
    pub pooled_ci: Vec<(f64, f64)>,
    /// Head-pooled mass the final query puts on the most recent event patch
    /// set, per block (the event patch with the largest start index whose
    /// span lies fully inside the lookback window).
    pub recent_event_mass: Vec<f64>,
    /// Mean fraction of tokens flagged as event patches.
    pub event_patch_fraction: f64,
}

/// Token flags for one window: `flags[t]` is true when token `t`'s span
/// intersects an event span.
fn event_flags(
    window_start: usize,
    token_spans: &[(usize, usize)],
    labels: &LabeledSeries,
    event_span: usize,
) -> Vec<bool> {
    token_spans
        .iter()
        .map(|&(s, e)| {
            let (abs_s, abs_e) = (window_start + s, window_start + e);
            labels
                .event_start_indices
                .iter()
                .any(|&ev| ev < abs_e && ev + event_span > abs_s)
        })
        .collect()
}

/// Tokens intersecting the most recent event whose whole span fits inside
/// the window, if any event does.
fn recent_event_tokens(
    window_start: usize,
    lookback: usize,
    token_spans: &[(usize, usize)],
    labels: &LabeledSeries,
    event_span: usize,
) -> Option<Vec<usize>> {
    let recent = labels
        .event_start_indices
        .iter()
        .copied()
        .filter(|&ev| ev >= window_start && ev + event_span <= window_start + lookback)
        .max()?;
    Some(
        token_spans
            .iter()
            .enumerate()
            .filter(|&(_, &(s, e))| {
                recent < window_start + e && recent + event_span > window_start + s
            })
            .map(|(t, _)| t)
            .collect(),
    )
}

/// Split every captured query row's mass between event and non-event
/// patches. `event_span` is the length of one labeled event.
pub fn event_attention_mass(
    capture: &AttentionCapture,
    labels: &LabeledSeries,
    event_span: usize,
    bootstrap_seed: u64,
) -> Result<EventAttentionStats> {
    if labels.event_start_indices.is_empty() {
        return Err(Error::InvalidArg("series has no labeled events".into()));
    }
    if event_span == 0 {
        return Err(Error::InvalidArg("event_span must be positive".into()));
    }
    let (nb, nh, nt, ns) =
        (capture.blocks, capture.heads, capture.tokens, capture.sequences());
    let lookback = capture.token_spans.last().map(|&(_, e)| e).unwrap_or(0);

    let mut per_head = vec![vec![0.0; nh]; nb];
    let mut per_query_event = vec![vec![0.0; nt]; nb];
    let mut per_query_nonevent = vec![vec![0.0; nt]; nb];
    let mut recent_sum = vec![0.0; nb];
    let mut recent_count = 0usize;
    let mut flag_sum = 0usize;
    // Per-sequence head-and-query-pooled event mass, for the bootstrap.
    let mut seq_pooled = vec![vec![0.0; ns]; nb];

    for s in 0..ns {
        let w = capture.window_starts[s];
        let flags = event_flags(w, &capture.token_spans, labels, event_span);
        flag_sum += flags.iter().filter(|&&f| f).count();
        let recent = recent_event_tokens(w, lookback, &capture.token_spans, labels, event_span);
        if recent.is_some() {
            recent_count += 1;
        }
        for b in 0..nb {
            for h in 0..nh {
                let m = capture.matrix(s, b, h);
                for q in 0..nt {
                    let row = &m[q * nt..(q + 1) * nt];
                    let event_mass: f64 = row
                        .iter()
                        .zip(&flags)
                        .filter(|&(_, &f)| f)
                        .map(|(&v, _)| v)
                        .sum();
                    let nonevent_mass: f64 = row
                        .iter()
                        .zip(&flags)
                        .filter(|&(_, &f)| !f)
                        .map(|(&v, _)| v)
                        .sum();
                    per_head[b][h] += event_mass;
                    per_query_event[b][q] += event_mass;
                    per_query_nonevent[b][q] += nonevent_mass;
                    seq_pooled[b][s] += event_mass;
                }
                if let Some(tokens) = &recent {
                    let final_row = &m[(nt - 1) * nt..nt * nt];
                    recent_sum[b] += tokens.iter().map(|&t| final_row[t]).sum::<f64>();
                }
            }
        }
    }

    let rows_per_head = (ns * nt) as f64;
    for row in per_head.iter_mut() {
        for v in row.iter_mut() {
            *v /= rows_per_head;
        }
    }
    let per_query_norm = (ns * nh) as f64;
    for b in 0..nb {
        for q in 0..nt {
            per_query_event[b][q] /= per_query_norm;
            per_query_nonevent[b][q] /= per_query_norm;
        }
        for s in 0..ns {
            seq_pooled[b][s] /= (nh * nt) as f64;
        }
    }
    let pooled: Vec<f64> =
        seq_pooled.iter().map(|per_seq| per_seq.iter().sum::<f64>() / ns as f64).collect();
    let recent_event_mass: Vec<f64> = recent_sum
        .iter()
        .map(|&v| if recent_count > 0 { v / (recent_count * nh) as f64 } else { f64::NAN })
        .collect();

    let mut rng = stream(bootstrap_seed, "bootstrap");
    let resamples = 1000;
    let pooled_ci: Vec<(f64, f64)> = seq_pooled
        .iter()
        .map(|per_seq| {
            let mut means = Vec::with_capacity(resamples);
            for _ in 0..resamples {
                let mut sum = 0.0;
                for _ in 0..ns {
                    sum += per_seq[rng.random_range(0..ns)];
                }
                means.push(sum / ns as f64);
            }
            means.sort_by(|a, b| a.total_cmp(b));
            (means[(resamples as f64 * 0.025) as usize], means[(resamples as f64 * 0.975) as usize])
        })
        .collect();

    Ok(EventAttentionStats {
        blocks: nb,
        heads: nh,
        tokens: nt,
        sequences: ns,
        per_head,
        per_query_event,
        per_query_nonevent,
        pooled,
        pooled_ci,
        recent_event_mass,
        event_patch_fraction: flag_sum as f64 / (ns * nt) as f64,
    })
}
