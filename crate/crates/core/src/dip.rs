//! Hartigan dip statistic.
//!
//! The dip of a sample is the smallest sup-norm distance between its
//! empirical CDF and any unimodal CDF (convex up to a mode, concave
//! after; an atom is allowed at the mode). It is computed here by
//! bisection on the distance, with an exact feasibility test per
//! candidate: a unimodal CDF within distance d exists iff for some modal
//! position the empirical staircase admits a convex chain through its
//! tube on the left, a concave chain on the right, and compatible bridge
//! values. Tube feasibility per side reduces to convex-hull dominance
//! tests, extrapolation-ray envelopes, and tangent slope forces, each
//! linear or log-linear per candidate distance.
//!
//! Convention: the returned dip is the min sup-distance itself, so two
//! equal point masses give 0.25 (the maximum) and every n-point sample
//! with distinct values has dip >= 1/(2n).

use crate::rng::{domain, CounterRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Human-readable statement of the value convention, for report metadata.
pub const DIP_CONVENTION: &str =
    "dip = min over unimodal CDFs of sup |F_n - G|; two equal point masses -> 0.25";

#[derive(Debug, Error)]
pub enum DipError {
    #[error("dip requires at least {min} samples, got {n}")]
    TooFewSamples { n: usize, min: usize },
    #[error("samples must be sorted ascending (violation at index {index})")]
    Unsorted { index: usize },
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("bootstrap requires at least 100 draws, got {0}")]
    TooFewBootstrap(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipResult {
    pub dip: f64,
    pub n: usize,
    /// Bootstrap-calibrated p-value when a test was run.
    pub p_value: Option<f64>,
}

/// Distinct values with lower/upper corner counts of the ECDF staircase.
struct Collapsed {
    xs: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: f64,
}

fn collapse(sorted: &[f64]) -> Collapsed {
    let n = sorted.len();
    let mut xs = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        xs.push(sorted[i]);
        lo.push(i as f64);
        hi.push(j as f64);
        i = j;
    }
    Collapsed {
        xs,
        lo,
        hi,
        n: n as f64,
    }
}

/// Max-line envelope over a fixed grid of x positions.
struct LineEnvelope {
    xs: Vec<f64>,
    seg: Vec<Option<(f64, f64)>>, // (slope, intercept) per node
    size: usize,
}

impl LineEnvelope {
    fn new(xs: &[f64]) -> Self {
        let size = xs.len().max(1);
        LineEnvelope {
            xs: xs.to_vec(),
            seg: vec![None; 4 * size],
            size,
        }
    }

    fn insert_node(&mut self, node: usize, l: usize, r: usize, mut line: (f64, f64)) {
        let mid = (l + r) / 2;
        let eval = |ln: (f64, f64), x: f64| ln.0 * x + ln.1;
        match self.seg[node] {
            None => self.seg[node] = Some(line),
            Some(mut cur) => {
                let better_mid = eval(line, self.xs[mid]) > eval(cur, self.xs[mid]);
                if better_mid {
                    std::mem::swap(&mut cur, &mut line);
                    self.seg[node] = Some(cur);
                }
                if l == r {
                    return;
                }
                // `line` is now the loser at mid; it can only win on one side
                if eval(line, self.xs[l]) > eval(cur, self.xs[l]) {
                    self.insert_node(2 * node, l, mid, line);
                } else if eval(line, self.xs[r]) > eval(cur, self.xs[r]) {
                    self.insert_node(2 * node + 1, mid + 1, r, line);
                }
            }
        }
    }

    fn insert(&mut self, slope: f64, intercept: f64) {
        self.insert_node(1, 0, self.size - 1, (slope, intercept));
    }

    /// Max over inserted lines at grid position `idx`; -inf when empty.
    fn query(&self, idx: usize) -> f64 {
        let x = self.xs[idx];
        let mut best = f64::NEG_INFINITY;
        let (mut l, mut r, mut node) = (0usize, self.size - 1, 1usize);
        loop {
            if let Some((s, b)) = self.seg[node] {
                let v = s * x + b;
                if v > best {
                    best = v;
                }
            }
            if l == r {
                break;
            }
            let mid = (l + r) / 2;
            if idx <= mid {
                node = 2 * node;
                r = mid;
            } else {
                node = 2 * node + 1;
                l = mid + 1;
            }
        }
        best
    }
}

/// Static range structure: max over k in [l..=r] of (hi_k - (a x_k + b)),
/// a segment tree whose nodes hold upper convex hulls of (x_k, hi_k).
struct HullRangeMax {
    size: usize,
    hulls: Vec<Vec<u32>>,
    xs: Vec<f64>,
    hi: Vec<f64>,
}

impl HullRangeMax {
    fn new(xs: &[f64], hi: &[f64]) -> Self {
        let size = xs.len();
        let mut hulls = vec![Vec::new(); 2 * size.max(1)];
        // leaves at size..2*size, internal nodes merge children ranges
        for i in 0..size {
            hulls[size + i] = vec![i as u32];
        }
        for node in (1..size).rev() {
            let (left, right) = (2 * node, 2 * node + 1);
            let mut merged: Vec<u32> =
                Vec::with_capacity(hulls[left].len() + hulls[right].len());
            merged.extend_from_slice(&hulls[left]);
            merged.extend_from_slice(&hulls[right]);
            // indices are x-sorted; build the upper hull
            let mut out: Vec<u32> = Vec::with_capacity(merged.len());
            for &k in &merged {
                let (xk, yk) = (xs[k as usize], hi[k as usize]);
                while out.len() >= 2 {
                    let i1 = out[out.len() - 1] as usize;
                    let i0 = out[out.len() - 2] as usize;
                    if (yk - hi[i1]) * (xs[i1] - xs[i0]) > (hi[i1] - hi[i0]) * (xk - xs[i1]) {
                        out.pop();
                    } else {
                        break;
                    }
                }
                out.push(k);
            }
            hulls[node] = out;
        }
        HullRangeMax {
            size,
            hulls,
            xs: xs.to_vec(),
            hi: hi.to_vec(),
        }
    }

    fn node_max(&self, node: usize, a: f64, b: f64) -> f64 {
        let h = &self.hulls[node];
        let f = |k: u32| self.hi[k as usize] - (a * self.xs[k as usize] + b);
        if h.len() <= 8 {
            return h.iter().cloned().map(f).fold(f64::NEG_INFINITY, f64::max);
        }
        let (mut l, mut r) = (0usize, h.len() - 1);
        while r - l > 2 {
            let m1 = l + (r - l) / 3;
            let m2 = r - (r - l) / 3;
            if f(h[m1]) < f(h[m2]) {
                l = m1 + 1;
            } else {
                r = m2;
            }
        }
        h[l..=r].iter().cloned().map(f).fold(f64::NEG_INFINITY, f64::max)
    }

    /// max over k in [l, r] inclusive of hi_k - (a x_k + b).
    fn query(&self, l: usize, r: usize, a: f64, b: f64) -> f64 {
        if l > r {
            return f64::NEG_INFINITY;
        }
        let mut best = f64::NEG_INFINITY;
        let (mut lo, mut hi_) = (l + self.size, r + self.size + 1);
        while lo < hi_ {
            if lo & 1 == 1 {
                best = best.max(self.node_max(lo, a, b));
                lo += 1;
            }
            if hi_ & 1 == 1 {
                hi_ -= 1;
                best = best.max(self.node_max(hi_, a, b));
            }
            lo >>= 1;
            hi_ >>= 1;
        }
        best
    }
}

/// D-independent per-prefix quantities of one side.
struct SideStatic {
    /// max over k < p of (hi_k - caphull_{0..p}(x_k)), plus passed tie gaps
    dev_relax: Vec<f64>,
    /// dev_relax plus the own gap (hi_p - lo_p); monotone in p
    dev_full: Vec<f64>,
    /// caphull_{0..p}(x_{p-1}), the chord bound one step back (index p)
    chord_prev: Vec<f64>,
}

fn side_static(xs: &[f64], lo: &[f64], hi: &[f64]) -> SideStatic {
    let m = xs.len();
    let range_max = if m > 512 {
        Some(HullRangeMax::new(xs, hi))
    } else {
        None
    };
    let mut hull: Vec<usize> = vec![0];
    let mut dev_relax = vec![0.0; m];
    let mut dev_full = vec![0.0; m];
    let mut chord_prev = vec![0.0; m];
    let mut running = 0.0f64;
    dev_full[0] = hi[0] - lo[0];
    for p in 1..m {
        running = running.max(hi[p - 1] - lo[p - 1]);
        while hull.len() >= 2 {
            let i1 = hull[hull.len() - 1];
            let i0 = hull[hull.len() - 2];
            if (lo[p] - lo[i1]) * (xs[i1] - xs[i0]) < (lo[i1] - lo[i0]) * (xs[p] - xs[i1]) {
                hull.pop();
            } else {
                break;
            }
        }
        let v = *hull.last().unwrap();
        if p - v > 1 {
            let slope = (lo[p] - lo[v]) / (xs[p] - xs[v]);
            let intercept = lo[v] - slope * xs[v];
            let span_max = match &range_max {
                Some(t) if p - v > 64 => t.query(v + 1, p - 1, slope, intercept),
                _ => {
                    let mut best = f64::NEG_INFINITY;
                    for k in v + 1..p {
                        let fit = slope * xs[k] + intercept;
                        best = best.max(hi[k] - fit);
                    }
                    best
                }
            };
            running = running.max(span_max);
        }
        hull.push(p);
        let a = hull[hull.len() - 2];
        let t = if xs[p] > xs[a] {
            (xs[p - 1] - xs[a]) / (xs[p] - xs[a])
        } else {
            0.0
        };
        chord_prev[p] = (lo[a] + t * (lo[p] - lo[a])).min(lo[p - 1]);
        dev_relax[p] = running;
        dev_full[p] = running.max(hi[p] - lo[p]);
    }
    SideStatic {
        dev_relax,
        dev_full,
        chord_prev,
    }
}

/// D-dependent per-position quantities of one side at candidate distance D.
struct SideSweep {
    /// max lower bound on the chain value at x_p from rays anchored left of p
    lb: Vec<f64>,
    /// arrival-slope force at (x_p, max(hi_p - D, lb_p)) over caps left of p
    tang: Vec<f64>,
}

fn side_sweep(xs: &[f64], lo: &[f64], hi: &[f64], d_counts: f64) -> SideSweep {
    let m = xs.len();
    let mut hull: Vec<usize> = Vec::with_capacity(16);
    let mut env = LineEnvelope::new(xs);
    let mut lb = vec![f64::NEG_INFINITY; m];
    let mut tang = vec![0.0; m];

    // steepest nonnegative slope from (qx, qy) back to a cap-hull vertex
    let tangent = |hull: &[usize], qx: f64, qy: f64| -> f64 {
        if hull.is_empty() {
            return 0.0;
        }
        let slope_at = |v: usize| -> f64 {
            if xs[v] < qx {
                (qy - (lo[v] + d_counts)) / (qx - xs[v])
            } else {
                f64::NEG_INFINITY
            }
        };
        if hull.len() <= 48 {
            let mut best = 0.0f64;
            for &v in hull {
                best = best.max(slope_at(v));
            }
            return best;
        }
        let (mut a, mut b) = (0usize, hull.len() - 1);
        while b - a > 2 {
            let m1 = a + (b - a) / 3;
            let m2 = b - (b - a) / 3;
            if slope_at(hull[m1]) < slope_at(hull[m2]) {
                a = m1 + 1;
            } else {
                b = m2;
            }
        }
        let mut best = 0.0f64;
        let lo_i = a.saturating_sub(2);
        let hi_i = (b + 2).min(hull.len() - 1);
        for &v in &hull[lo_i..=hi_i] {
            best = best.max(slope_at(v));
        }
        best
    };

    for p in 0..m {
        lb[p] = if p == 0 {
            f64::NEG_INFINITY
        } else {
            env.query(p)
        };
        let req = hi[p] - d_counts;
        let a_lo = req.max(lb[p]);
        tang[p] = tangent(&hull, xs[p], a_lo);
        let ray_slope = tangent(&hull, xs[p], req);
        while hull.len() >= 2 {
            let i1 = hull[hull.len() - 1];
            let i0 = hull[hull.len() - 2];
            if (lo[p] - lo[i1]) * (xs[i1] - xs[i0]) < (lo[i1] - lo[i0]) * (xs[p] - xs[i1]) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
        // ray: lower bound req + slope * (x - x_p) for all later x
        env.insert(ray_slope, req - ray_slope * xs[p]);
    }
    SideSweep { lb, tang }
}

struct Prepared {
    c: Collapsed,
    rx: Vec<f64>,
    rlo: Vec<f64>,
    rhi: Vec<f64>,
    fwd: SideStatic,
    bwd: SideStatic,
}

fn prepare(sorted: &[f64]) -> Prepared {
    let c = collapse(sorted);
    let m = c.xs.len();
    let mut rx = Vec::with_capacity(m);
    let mut rlo = Vec::with_capacity(m);
    let mut rhi = Vec::with_capacity(m);
    for i in (0..m).rev() {
        rx.push(-c.xs[i]);
        rlo.push(c.n - c.hi[i]);
        rhi.push(c.n - c.lo[i]);
    }
    let fwd = side_static(&c.xs, &c.lo, &c.hi);
    let bwd = side_static(&rx, &rlo, &rhi);
    Prepared {
        c,
        rx,
        rlo,
        rhi,
        fwd,
        bwd,
    }
}

const EPS: f64 = 1e-9;

fn feasible(p: &Prepared, dip: f64) -> bool {
    let m = p.c.xs.len();
    if m == 1 {
        return true;
    }
    let n = p.c.n;
    let d = dip * n;
    let two_d = 2.0 * d;
    let fs = side_sweep(&p.c.xs, &p.c.lo, &p.c.hi, d);
    let bs = side_sweep(&p.rx, &p.rlo, &p.rhi, d);
    let rmap = |q: usize| m - 1 - q;

    // point modes: atom allowed at x_q
    for q in 0..m {
        if q > 0 && p.fwd.dev_relax[q] > two_d + EPS {
            continue;
        }
        if q < m - 1 && p.bwd.dev_relax[rmap(q)] > two_d + EPS {
            continue;
        }
        let a_lo = fs.lb[q].max(p.c.lo[q] - d).max(0.0);
        let a_hi = p.c.lo[q] + d;
        let b_lo = (p.c.hi[q] - d).max(0.0);
        let b_hi = (p.c.hi[q] + d).min(n - bs.lb[rmap(q)]);
        if a_lo <= a_hi + EPS && b_lo <= b_hi + EPS && a_lo <= b_hi + EPS {
            return true;
        }
    }

    // gap modes: mode strictly between x_j and x_{j+1}
    for j in 0..m - 1 {
        if p.fwd.dev_full[j + 1] > two_d + EPS {
            continue;
        }
        if p.bwd.dev_full[rmap(j)] > two_d + EPS {
            continue;
        }
        let dx = p.c.xs[j + 1] - p.c.xs[j];
        let a_lo = (p.c.hi[j] - d).max(fs.lb[j]);
        let a_hi = (p.fwd.chord_prev[j + 1] + d).min(n - bs.lb[rmap(j)]);
        let right_chord = if rmap(j + 1) + 1 < m {
            n - p.bwd.chord_prev[rmap(j + 1) + 1] - d
        } else {
            f64::NEG_INFINITY
        };
        let b_lo = (p.c.hi[j + 1] - d).max(fs.lb[j + 1]).max(right_chord);
        let b_hi = (p.c.lo[j + 1] + d).min(n - bs.lb[rmap(j + 1)]);
        if a_lo > a_hi + EPS || b_lo > b_hi + EPS {
            continue;
        }
        let need_b = a_lo + dx * fs.tang[j];
        let cap_a = b_hi - dx * bs.tang[rmap(j + 1)];
        if b_lo.max(need_b) <= b_hi + EPS && a_lo <= cap_a + EPS {
            return true;
        }
    }
    false
}

fn check_input(sorted: &[f64]) -> Result<(), DipError> {
    if sorted.len() < 4 {
        return Err(DipError::TooFewSamples {
            n: sorted.len(),
            min: 4,
        });
    }
    for (i, w) in sorted.windows(2).enumerate() {
        if !w[0].is_finite() {
            return Err(DipError::NonFinite { index: i });
        }
        if w[0] > w[1] {
            return Err(DipError::Unsorted { index: i + 1 });
        }
    }
    if !sorted[sorted.len() - 1].is_finite() {
        return Err(DipError::NonFinite {
            index: sorted.len() - 1,
        });
    }
    Ok(())
}

/// Prepared sample for repeated dip probes: the sort-independent static
/// structures are built once and shared by bisections and threshold tests.
pub struct PreparedDip {
    inner: Prepared,
    n: usize,
}

impl PreparedDip {
    pub fn new(sorted: &[f64]) -> Result<Self, DipError> {
        check_input(sorted)?;
        Ok(PreparedDip {
            inner: prepare(sorted),
            n: sorted.len(),
        })
    }

    pub fn degenerate(&self) -> bool {
        self.inner.c.xs.len() == 1
    }

    /// Whether the dip exceeds `threshold`.
    pub fn exceeds(&self, threshold: f64) -> bool {
        if self.degenerate() {
            return 0.0 > threshold;
        }
        !feasible(&self.inner, threshold)
    }

    /// Bisect the dip to resolution 0.5 / 2^iters.
    pub fn bisect(&self, iters: u32) -> DipResult {
        if self.degenerate() {
            return DipResult {
                dip: 0.0,
                n: self.n,
                p_value: None,
            };
        }
        let (mut lo, mut hi) = (0.0f64, 0.5f64);
        for _ in 0..iters {
            let mid = 0.5 * (lo + hi);
            if feasible(&self.inner, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        DipResult {
            dip: 0.5 * (lo + hi),
            n: self.n,
            p_value: None,
        }
    }
}

/// Dip of a sorted sample.
pub fn dip_statistic(sorted: &[f64]) -> Result<DipResult, DipError> {
    dip_statistic_coarse(sorted, 36)
}

/// Dip of a sorted sample at reduced bisection precision (resolution
/// 0.5 / 2^iters); useful for per-step classification in long runs.
pub fn dip_statistic_coarse(sorted: &[f64], iters: u32) -> Result<DipResult, DipError> {
    check_input(sorted)?;
    let p = prepare(sorted);
    if p.c.xs.len() == 1 {
        return Ok(DipResult {
            dip: 0.0,
            n: sorted.len(),
            p_value: None,
        });
    }
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if feasible(&p, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(DipResult {
        dip: 0.5 * (lo + hi),
        n: sorted.len(),
        p_value: None,
    })
}

/// Whether the sample's dip exceeds `threshold` (a single feasibility probe).
pub fn dip_exceeds(sorted: &[f64], threshold: f64) -> Result<bool, DipError> {
    check_input(sorted)?;
    let p = prepare(sorted);
    if p.c.xs.len() == 1 {
        return Ok(0.0 > threshold);
    }
    Ok(!feasible(&p, threshold))
}

/// Dip plus a bootstrap p-value calibrated on uniform samples of the same
/// size: the fraction of `n_boot` uniform-sample dips exceeding the
/// observed dip.
pub fn dip_test(sorted: &[f64], n_boot: u32, seed: u64) -> Result<DipResult, DipError> {
    if n_boot < 100 {
        return Err(DipError::TooFewBootstrap(n_boot));
    }
    let mut result = dip_statistic(sorted)?;
    let n = sorted.len();
    let rng = CounterRng::new(seed).stream(domain::BOOTSTRAP);
    let observed = result.dip;
    let exceed: u32 = (0..n_boot as u64)
        .into_par_iter()
        .map(|b| {
            let mut buf = vec![0.0f64; n];
            for (i, x) in buf.iter_mut().enumerate() {
                *x = rng.uniform(&[b, i as u64]);
            }
            buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
            u32::from(dip_exceeds(&buf, observed).expect("bootstrap sample is valid"))
        })
        .sum();
    result.p_value = Some(exceed as f64 / n_boot as f64);
    Ok(result)
}
