//! Anomaly scores: per-pixel NLL maps, top-k% aggregation, AUROC and the
//! local-outlier-factor reference scorer.

use std::cmp::Ordering;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::{nll_value, Generator, HypothesisValues};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreMode {
    /// Each pixel scored by its best-matching hypothesis only.
    WtaLocal,
    /// Each pixel scored by the full mixture; uniform weights without a
    /// mixing head.
    MdnGlobal,
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wta_local" => Ok(ScoreMode::WtaLocal),
            "mdn_global" => Ok(ScoreMode::MdnGlobal),
            _ => Err(Error::Config(format!(
                "unknown score mode {s:?}; expected wta_local or mdn_global"
            ))),
        }
    }
}

impl ScoreMode {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMode::WtaLocal => "wta_local",
            ScoreMode::MdnGlobal => "mdn_global",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Anomaly,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Anomaly => "anomaly",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub pixel_nll: Vec<f64>,
    pub aggregate: f64,
    pub label: Label,
}

/// Per-pixel scores `(B, D)` from precomputed hypotheses.
pub fn pixel_scores_from(x: &Tensor, h: &HypothesisValues, mode: ScoreMode) -> Result<Tensor> {
    let n_h = h.mu.len();
    if n_h == 0 {
        return Err(Error::Config("no hypotheses to score with".into()));
    }
    if h.mu.iter().chain(&h.log_sigma).any(|m| m.shape() != x.shape()) {
        return Err(Error::Config(format!(
            "hypothesis shapes do not match data shape {:?}",
            x.shape()
        )));
    }
    let (b, d) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![0.0; b * d];
    match mode {
        ScoreMode::WtaLocal => {
            for (i, o) in out.iter_mut().enumerate() {
                *o = (0..n_h)
                    .map(|k| nll_value(x.data()[i], h.mu[k].data()[i], h.log_sigma[k].data()[i]))
                    .fold(f64::INFINITY, f64::min);
            }
        }
        ScoreMode::MdnGlobal => {
            let log_alpha = mixture_log_weights(h, b)?;
            let mut terms = vec![0.0; n_h];
            for r in 0..b {
                for c in 0..d {
                    let i = r * d + c;
                    for (k, term) in terms.iter_mut().enumerate() {
                        *term = log_alpha[r * n_h + k]
                            - nll_value(x.data()[i], h.mu[k].data()[i], h.log_sigma[k].data()[i]);
                    }
                    out[i] = -log_sum_exp(&terms);
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, d], out))
}

/// Row-wise log-softmax of the mixing logits, or `−log H` everywhere.
fn mixture_log_weights(h: &HypothesisValues, b: usize) -> Result<Vec<f64>> {
    let n_h = h.mu.len();
    match &h.mix_logits {
        None => Ok(vec![-(n_h as f64).ln(); b * n_h]),
        Some(l) => {
            if l.shape() != [b, n_h] {
                return Err(Error::Config(format!(
                    "mixing logits have shape {:?}, expected [{b}, {n_h}]",
                    l.shape()
                )));
            }
            let mut out = Vec::with_capacity(b * n_h);
            for r in 0..b {
                let row = l.row(r);
                let lse = log_sum_exp(row);
                out.extend(row.iter().map(|v| v - lse));
            }
            Ok(out)
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-pixel scores of `x` with the latent fixed at the posterior mean.
pub fn pixel_scores(gen: &Generator, x: &Tensor, mode: ScoreMode) -> Result<Tensor> {
    if !gen.is_finite() {
        return Err(Error::Numerical("model parameters are not finite".into()));
    }
    let h = gen.infer(x)?;
    pixel_scores_from(x, &h, mode)
}

/// Sum of the `⌈D·p/100⌉` largest entries, added in their original order so
/// that `p = 100` is exactly the plain sum.
pub fn aggregate(scores: &[f64], top_percent: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Data("cannot aggregate an empty score map".into()));
    }
    if !(top_percent > 0.0 && top_percent <= 100.0) {
        return Err(Error::Config(format!("top_percent {top_percent} outside (0, 100]")));
    }
    let n = scores.len();
    let k = ((n as f64 * top_percent / 100.0).ceil() as usize).clamp(1, n);
    if k == n {
        return Ok(scores.iter().sum());
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.select_nth_unstable_by(k - 1, |&a, &b| desc(scores[a], scores[b]).then(a.cmp(&b)));
    let mut top = idx[..k].to_vec();
    top.sort_unstable();
    Ok(top.iter().map(|&i| scores[i]).sum())
}

fn desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocResult {
    pub auroc: f64,
    /// Decreasing; a sample is flagged when its score is `>=` the threshold.
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
}

/// Probability that a random anomaly outscores a random normal sample,
/// ties counted one half, via mid-ranks.
pub fn auroc(scores: &[(f64, Label)]) -> Result<RocResult> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| s.is_nan()) {
        return Err(Error::Numerical(format!("score {s} cannot be ranked")));
    }
    let n_pos = scores.iter().filter(|(_, l)| *l == Label::Anomaly).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Config(
            "AUROC needs both normal and anomalous samples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));

    // Twice the rank sum keeps mid-ranks integral.
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]].0 == scores[order[i]].0 {
            j += 1;
        }
        let mid2 = (i + 1 + j) as u128; // 2 × mean of ranks i+1..=j
        let pos = order[i..j].iter().filter(|&&o| scores[o].1 == Label::Anomaly).count() as u128;
        rank2_sum += mid2 * pos;
        i = j;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    let u2 = rank2_sum - p * (p + 1);
    let auroc = u2 as f64 / (2 * p * q) as f64;

    let (mut thresholds, mut tpr, mut fpr) = (vec![f64::INFINITY], vec![0.0], vec![0.0]);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = order.len();
    while i > 0 {
        let s = scores[order[i - 1]].0;
        while i > 0 && scores[order[i - 1]].0 == s {
            match scores[order[i - 1]].1 {
                Label::Anomaly => tp += 1,
                Label::Normal => fp += 1,
            }
            i -= 1;
        }
        thresholds.push(s);
        tpr.push(tp as f64 / n_pos as f64);
        fpr.push(fp as f64 / n_neg as f64);
    }
    Ok(RocResult {
        auroc,
        thresholds,
        tpr,
        fpr,
    })
}

/// Smallest distance used anywhere in LOF; keeps duplicate points finite.
pub const LOF_DISTANCE_FLOOR: f64 = 1e-12;

/// Classic local outlier factor over the `k` nearest neighbours (ties at the
/// k-distance included).
pub fn lof_scores(points: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    let m = LofModel::fit(points, k)?;
    Ok((0..points.len()).map(|p| m.lof_of(&m.neighbours[p], m.lrd[p])).collect())
}

/// Reference set with precomputed k-distances and densities, for scoring
/// points outside it.
#[derive(Clone, Debug)]
pub struct LofModel {
    points: Vec<Vec<f64>>,
    k: usize,
    k_dist: Vec<f64>,
    lrd: Vec<f64>,
    neighbours: Vec<Vec<usize>>,
}

fn lof_dist(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    ss.sqrt().max(LOF_DISTANCE_FLOOR)
}

impl LofModel {
    pub fn fit(points: &[Vec<f64>], k: usize) -> Result<Self> {
        let n = points.len();
        if k == 0 || k >= n {
            return Err(Error::Config(format!("LOF needs 0 < k < n, got k={k}, n={n}")));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Data("LOF points differ in dimension".into()));
        }
        let mut m = Self {
            points: points.to_vec(),
            k,
            k_dist: vec![0.0; n],
            lrd: vec![0.0; n],
            neighbours: vec![Vec::new(); n],
        };
        for p in 0..n {
            let (kd, nb) = m.knn(&points[p], Some(p));
            m.k_dist[p] = kd;
            m.neighbours[p] = nb;
        }
        for p in 0..n {
            m.lrd[p] = m.lrd_of(&points[p], &m.neighbours[p]);
        }
        Ok(m)
    }

    /// k-distance and neighbourhood of `q` within the reference set.
    fn knn(&self, q: &[f64], exclude: Option<usize>) -> (f64, Vec<usize>) {
        let mut d: Vec<(f64, usize)> = (0..self.points.len())
            .filter(|&o| Some(o) != exclude)
            .map(|o| (lof_dist(q, &self.points[o]), o))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let kd = d[self.k - 1].0;
        (kd, d.iter().take_while(|(v, _)| *v <= kd).map(|&(_, o)| o).collect())
    }

    fn lrd_of(&self, q: &[f64], nb: &[usize]) -> f64 {
        let reach: f64 = nb.iter().map(|&o| self.k_dist[o].max(lof_dist(q, &self.points[o]))).sum();
        nb.len() as f64 / reach
    }

    fn lof_of(&self, nb: &[usize], lrd: f64) -> f64 {
        nb.iter().map(|&o| self.lrd[o]).sum::<f64>() / (nb.len() as f64 * lrd)
    }

    /// LOF of a query point that is not part of the reference set.
    pub fn score(&self, q: &[f64]) -> f64 {
        let (_, nb) = self.knn(q, None);
        self.lof_of(&nb, self.lrd_of(q, &nb))
    }
}

/// Affine map of `v` onto `[0, 1]`; constant input maps to zeros.
pub fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Scores every row of `x` with a single label.
pub fn score_samples(
    gen: &Generator,
    x: &Tensor,
    label: Label,
    mode: ScoreMode,
    top_percent: f64,
) -> Result<Vec<ScoredSample>> {
    if x.shape()[0] == 0 {
        return Ok(Vec::new());
    }
    let maps = pixel_scores(gen, x, mode)?;
    (0..maps.rows())
        .map(|r| {
            let row = maps.row(r);
            Ok(ScoredSample {
                pixel_nll: row.to_vec(),
                aggregate: aggregate(row, top_percent)?,
                label,
            })
        })
        .collect()
}

/// `sample_id,label,aggregate` rows followed by an `auroc` summary row.
pub fn scores_csv(samples: &[ScoredSample], roc: &RocResult) -> String {
    let mut s = String::from("sample_id,label,aggregate\n");
    for (i, smp) in samples.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{}", smp.label, smp.aggregate);
    }
    let _ = writeln!(s, "auroc,,{}", roc.auroc);
    s
}
