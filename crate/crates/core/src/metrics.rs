//! Score normalisation, aggregation and the Σ̄ diagnostic.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{mean, median};
use crate::net::{Layer, Network};
use crate::noisy::NoisyLinear;

/// Raw agent score with the reference scores of its task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub agent: f64,
    pub random: f64,
    pub human: f64,
}

/// `100·(agent − random)/(human − random)`: 0 is random, 100 is human level.
pub fn human_normalised(s: ScoreTriple) -> Result<f64> {
    let span = s.human - s.random;
    if span == 0.0 || !span.is_finite() {
        return Err(Error::Degenerate(format!(
            "human score {} equals random score",
            s.human
        )));
    }
    Ok(100.0 * (s.agent - s.random) / span)
}

/// `100·(noisy − baseline)/(max(human, baseline) − random)`.
pub fn relative_normalised(noisy: f64, baseline: f64, human: f64, random: f64) -> Result<f64> {
    let span = human.max(baseline) - random;
    if span == 0.0 || !span.is_finite() {
        return Err(Error::Degenerate(
            "relative score denominator is zero".into(),
        ));
    }
    Ok(100.0 * (noisy - baseline) / span)
}

/// Max over training per seed, then the mean over seeds.
pub fn task_score(curves: &[Vec<f64>]) -> Result<f64> {
    if curves.is_empty() || curves.iter().any(|c| c.is_empty()) {
        return Err(Error::Degenerate(
            "a task needs at least one non-empty seed curve".into(),
        ));
    }
    let best: Vec<f64> = curves
        .iter()
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(mean(&best))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
    pub per_task: BTreeMap<String, f64>,
}

/// Mean and median across tasks of [`task_score`].
pub fn aggregate(tasks: &BTreeMap<String, Vec<Vec<f64>>>) -> Result<Aggregate> {
    if tasks.is_empty() {
        return Err(Error::Degenerate("no tasks to aggregate".into()));
    }
    let per_task = tasks
        .iter()
        .map(|(name, curves)| Ok((name.clone(), task_score(curves)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let values: Vec<f64> = per_task.values().copied().collect();
    Ok(Aggregate {
        mean: mean(&values),
        median: median(&values),
        per_task,
    })
}

/// Percentage improvement of `noisy` over `baseline`, rounded to an integer.
pub fn improvement_percent(baseline: f64, noisy: f64) -> Result<i64> {
    if baseline == 0.0 {
        return Err(Error::Degenerate("baseline median is zero".into()));
    }
    Ok((100.0 * (noisy - baseline) / baseline).round() as i64)
}

/// One agent family's row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub family: String,
    pub baseline_mean: f64,
    pub baseline_median: f64,
    pub noisy_mean: f64,
    pub noisy_median: f64,
    pub improvement_percent: i64,
}

impl ComparisonRow {
    pub fn new(family: &str, baseline: (f64, f64), noisy: (f64, f64)) -> Result<Self> {
        Ok(Self {
            family: family.to_string(),
            baseline_mean: baseline.0,
            baseline_median: baseline.1,
            noisy_mean: noisy.0,
            noisy_median: noisy.1,
            improvement_percent: improvement_percent(baseline.1, noisy.1)?,
        })
    }

    /// `family & mean & median & mean & median & N%`, scores rounded.
    pub fn format(&self) -> String {
        format!(
            "{} & {:.0} & {:.0} & {:.0} & {:.0} & {}%",
            self.family,
            self.baseline_mean,
            self.baseline_median,
            self.noisy_mean,
            self.noisy_median,
            self.improvement_percent
        )
    }
}

/// Renders rows under a two-line header, one row per line.
pub fn format_table(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(" & Baseline & & NoisyNet & & Improvement\n");
    out.push_str(" & Mean & Median & Mean & Median & (On median)\n");
    for r in rows {
        let _ = writeln!(out, "{}", r.format());
    }
    out
}

/// Σ̄: mean of `|σʷ|` over a layer's weight entries.
pub fn sigma_bar(layer: &NoisyLinear) -> f64 {
    mean_abs(layer.sigma_w.as_slice())
}

/// Mean of `|σᵇ|`, logged alongside Σ̄.
pub fn sigma_bar_bias(layer: &NoisyLinear) -> f64 {
    mean_abs(&layer.sigma_b)
}

/// Σ̄ of a network layer; plain layers have no σ.
pub fn layer_sigma_bar(layer: &Layer) -> Result<f64> {
    layer
        .as_noisy()
        .map(sigma_bar)
        .ok_or_else(|| Error::Usage("sigma_bar of a layer without noise".into()))
}

/// Accumulates offsets from the first entry, so a constant block gives that
/// constant exactly.
fn mean_abs(v: &[f64]) -> f64 {
    let Some(first) = v.first().map(|x| x.abs()) else {
        return f64::NAN;
    };
    first + v.iter().map(|x| x.abs() - first).sum::<f64>() / v.len() as f64
}

/// Per-noisy-layer `(Σ̄ weights, Σ̄ bias)` in canonical layer order.
pub fn network_sigma_bars(net: &Network) -> (Vec<f64>, Vec<f64>) {
    net.noisy_layers()
        .map(|l| (sigma_bar(l), sigma_bar_bias(l)))
        .unzip()
}

/// Σ̄ of every noisy layer over training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SigmaTrace {
    pub frames: Vec<u64>,
    /// `weights[layer][i]` is Σ̄ of that layer at `frames[i]`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl SigmaTrace {
    pub fn record(&mut self, frame: u64, net: &Network) {
        let (w, b) = network_sigma_bars(net);
        if self.weights.is_empty() {
            self.weights = vec![Vec::new(); w.len()];
            self.biases = vec![Vec::new(); b.len()];
        }
        self.frames.push(frame);
        for (series, v) in self.weights.iter_mut().zip(w) {
            series.push(v);
        }
        for (series, v) in self.biases.iter_mut().zip(b) {
            series.push(v);
        }
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .all(|&v| v >= 0.0)
    }

    /// The series of the last (output) noisy layer.
    pub fn output_layer(&self) -> Option<&[f64]> {
        self.weights.last().map(Vec::as_slice)
    }
}
