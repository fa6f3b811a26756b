//! Exact t-SNE (O(n²) per iteration).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::embedding::{self, EmbeddingSet};
use crate::rng;

const BANDWIDTH_STEPS: usize = 64;
const ENTROPY_TOLERANCE: f64 = 1e-5;
const INIT_SIGMA: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum TsneError {
    #[error("perplexity {perplexity} too large for {points} points")]
    PerplexityTooLarge { perplexity: f64, points: usize },
    #[error("t-SNE needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TsneError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TsneError::DimensionMismatch("ragged rows".into()));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Momentum before `momentum_switch`.
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub output_dim: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            early_exaggeration: 12.0,
            exaggeration_iterations: 100,
            output_dim: 2,
            seed: 42,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self) -> Result<(), TsneError> {
        let bad = |m: &str| Err(TsneError::InvalidConfig(m.into()));
        if self.perplexity.is_nan() || self.perplexity <= 1.0 {
            return bad("perplexity must exceed 1");
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.final_momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.early_exaggeration.is_nan() || self.early_exaggeration < 1.0 {
            return bad("early exaggeration must be at least 1");
        }
        if self.output_dim == 0 {
            return bad("output dimension must be positive");
        }
        Ok(())
    }
}

/// Pairwise squared Euclidean distances.
pub fn squared_distances(points: &Matrix) -> Matrix {
    let n = points.rows;
    let data = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..n).map(move |j| {
                points.row(i).iter().zip(points.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
        })
        .collect();
    Matrix { rows: n, cols: n, data }
}

/// Shannon entropy in bits of a probability row.
pub fn entropy_bits(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.log2()).sum::<f64>()
}

/// Gaussian neighbour distribution of point `i` at precision `beta` on
/// distances `d` (diagonal excluded); returns the row and its entropy.
fn gaussian_row(d: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (o, &v)) in out.iter_mut().zip(d).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (v - dmin)).exp() };
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    entropy_bits(out)
}

fn search_row(d_row: &[f64], i: usize, target: f64) -> Vec<f64> {
    let n = d_row.len();
    // Work on distances relative to the row mean so the search does not
    // depend on the overall scale.
    let mean = d_row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum::<f64>() / (n - 1) as f64;
    let d: Vec<f64> = if mean > 0.0 { d_row.iter().map(|v| v / mean).collect() } else { d_row.to_vec() };
    let mut row = vec![0.0; n];
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut log_beta = 0.0f64;
    for _ in 0..BANDWIDTH_STEPS {
        let h = gaussian_row(&d, i, log_beta.exp(), &mut row);
        if (h - target).abs() < ENTROPY_TOLERANCE {
            break;
        }
        if h > target {
            lo = log_beta;
            log_beta = if hi.is_finite() { 0.5 * (lo + hi) } else { log_beta + 1.0 };
        } else {
            hi = log_beta;
            log_beta = if lo.is_finite() { 0.5 * (lo + hi) } else { log_beta - 1.0 };
        }
    }
    gaussian_row(&d, i, log_beta.exp(), &mut row);
    row
}

/// Row-conditional neighbour probabilities `P(j|i)`, each row with entropy
/// `log2(perplexity)` where reachable.
pub fn row_conditionals(distances_sq: &Matrix, perplexity: f64) -> Result<Matrix, TsneError> {
    let n = distances_sq.rows;
    if distances_sq.cols != n {
        return Err(TsneError::DimensionMismatch(format!("{}x{} distance matrix", n, distances_sq.cols)));
    }
    if n < 2 || perplexity > (n - 1) as f64 || perplexity.is_nan() || perplexity <= 0.0 {
        return Err(TsneError::PerplexityTooLarge { perplexity, points: n });
    }
    let target = perplexity.log2();
    let data = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| search_row(distances_sq.row(i), i, target))
        .collect();
    Ok(Matrix { rows: n, cols: n, data })
}

/// Symmetrized joint probabilities `(P(j|i) + P(i|j)) / 2n`.
pub fn conditional_probabilities(distances_sq: &Matrix, perplexity: f64) -> Result<Matrix, TsneError> {
    let c = row_conditionals(distances_sq, perplexity)?;
    let n = c.rows;
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            p.data[i * n + j] = (c.get(i, j) + c.get(j, i)) / (2 * n) as f64;
        }
    }
    Ok(p)
}

/// Unnormalized Student-t kernel `1 / (1 + |yi - yj|²)` (zero diagonal)
/// and its sum.
fn student_kernel(y: &Matrix) -> (Vec<f64>, f64) {
    let n = y.rows;
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = y.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            let k = 1.0 / (1.0 + d2);
            num[i * n + j] = k;
            num[j * n + i] = k;
            z += 2.0 * k;
        }
    }
    (num, z)
}

fn check_shapes(p: &Matrix, y: &Matrix) -> Result<(), TsneError> {
    if p.rows != p.cols || p.rows != y.rows {
        return Err(TsneError::DimensionMismatch(format!("P is {}x{}, Y has {} rows", p.rows, p.cols, y.rows)));
    }
    Ok(())
}

/// Low-dimensional affinities `q_ij`.
pub fn student_affinities(y: &Matrix) -> Matrix {
    let (num, z) = student_kernel(y);
    Matrix { rows: y.rows, cols: y.rows, data: num.into_iter().map(|k| k / z).collect() }
}

/// KL(P || Q) in nats.
pub fn kl_divergence(p: &Matrix, y: &Matrix) -> Result<f64, TsneError> {
    check_shapes(p, y)?;
    let q = student_affinities(y);
    Ok(p.data
        .iter()
        .zip(&q.data)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &qij)| pij * (pij / qij.max(f64::MIN_POSITIVE)).ln())
        .sum())
}

/// `dC/dy_i = 4 Σ_j (p_ij − q_ij)(y_i − y_j) / (1 + |y_i − y_j|²)`.
pub fn kl_gradient(p: &Matrix, y: &Matrix) -> Result<Matrix, TsneError> {
    check_shapes(p, y)?;
    let (n, d) = (y.rows, y.cols);
    let (num, z) = student_kernel(y);
    let mut grad = Matrix::zeros(n, d);
    for i in 0..n {
        let g = &mut grad.data[i * d..(i + 1) * d];
        for j in 0..n {
            if i == j {
                continue;
            }
            let k = num[i * n + j];
            let w = 4.0 * (p.get(i, j) - k / z) * k;
            for c in 0..d {
                g[c] += w * (y.data[i * d + c] - y.data[j * d + c]);
            }
        }
    }
    Ok(grad)
}

/// Optimizer state; one [`TsneState::step`] is one gradient iteration.
#[derive(Debug, Clone)]
pub struct TsneState {
    config: TsneConfig,
    p: Matrix,
    y: Matrix,
    velocity: Matrix,
    iteration: usize,
}

impl TsneState {
    /// Prepares P from raw points and draws the centred Gaussian start.
    pub fn new(points: &Matrix, config: TsneConfig) -> Result<Self, TsneError> {
        config.validate()?;
        let n = points.rows;
        if n < 4 {
            return Err(TsneError::TooFewPoints(n));
        }
        if config.perplexity >= (n - 1) as f64 / 3.0 {
            return Err(TsneError::PerplexityTooLarge { perplexity: config.perplexity, points: n });
        }
        let p = conditional_probabilities(&squared_distances(points), config.perplexity)?;
        let mut rng = rng::stream(config.seed, "tsne/init");
        let normal = Normal::new(0.0, INIT_SIGMA).expect("valid sigma");
        let mut y = Matrix::zeros(n, config.output_dim);
        y.data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        for c in 0..y.cols {
            let mean = (0..n).map(|i| y.get(i, c)).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y.data[i * y.cols + c] -= mean);
        }
        let velocity = Matrix::zeros(n, config.output_dim);
        Ok(Self { config, p, y, velocity, iteration: 0 })
    }

    /// Starts from given joint probabilities and coordinates.
    pub fn from_parts(p: Matrix, y: Matrix, config: TsneConfig) -> Result<Self, TsneError> {
        config.validate()?;
        check_shapes(&p, &y)?;
        let velocity = Matrix::zeros(y.rows, y.cols);
        Ok(Self { config, p, y, velocity, iteration: 0 })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn coordinates(&self) -> &Matrix {
        &self.y
    }

    pub fn joint_probabilities(&self) -> &Matrix {
        &self.p
    }

    /// KL of the current layout against the unexaggerated P.
    pub fn kl(&self) -> f64 {
        kl_divergence(&self.p, &self.y).expect("shapes fixed at construction")
    }

    pub fn step(&mut self) {
        let c = &self.config;
        let exaggeration = if self.iteration < c.exaggeration_iterations { c.early_exaggeration } else { 1.0 };
        let momentum = if self.iteration < c.momentum_switch { c.momentum } else { c.final_momentum };
        let grad = if exaggeration == 1.0 {
            kl_gradient(&self.p, &self.y)
        } else {
            let mut pe = self.p.clone();
            pe.data.iter_mut().for_each(|v| *v *= exaggeration);
            kl_gradient(&pe, &self.y)
        }
        .expect("shapes fixed at construction");
        for ((v, y), g) in self.velocity.data.iter_mut().zip(self.y.data.iter_mut()).zip(&grad.data) {
            *v = momentum * *v - c.learning_rate * g;
            *y += *v;
        }
        self.iteration += 1;
    }

    pub fn run(mut self) -> Matrix {
        while self.iteration < self.config.iterations {
            self.step();
        }
        self.y
    }
}

/// Embeds `points` (one row each) and returns coordinates in input order.
pub fn run_tsne_points(points: &Matrix, config: &TsneConfig) -> Result<Matrix, TsneError> {
    Ok(TsneState::new(points, config.clone())?.run())
}

pub fn run_tsne(set: &EmbeddingSet, config: &TsneConfig) -> Result<Matrix, TsneError> {
    let rows: Vec<Vec<f64>> = set.iter().map(|e| e.values.clone()).collect();
    let points = Matrix::from_rows(&rows)?;
    run_tsne_points(&points, config)
}

/// Projected copy of `set` with t-SNE coordinates as values.
pub fn project_set(set: &EmbeddingSet, config: &TsneConfig) -> Result<EmbeddingSet, TsneError> {
    let y = run_tsne(set, config)?;
    let vectors = set
        .iter()
        .enumerate()
        .map(|(i, e)| embedding::EmbeddingVector::new(e.utterance_id.clone(), e.speaker_id.clone(), y.row(i).to_vec()))
        .collect();
    EmbeddingSet::new(vectors).map_err(|e| TsneError::DimensionMismatch(e.to_string()))
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Scatter plot of 2-D coordinates, one colour per label.
pub fn scatter_svg(coords: &Matrix, labels: &[&str]) -> String {
    const SIZE: f64 = 600.0;
    const MARGIN: f64 = 20.0;
    let mut colors = BTreeMap::new();
    for l in labels {
        let next = colors.len();
        colors.entry(*l).or_insert(PALETTE[next % PALETTE.len()]);
    }
    let xs: Vec<f64> = (0..coords.rows).map(|i| coords.get(i, 0)).collect();
    let ys: Vec<f64> = (0..coords.rows).map(|i| if coords.cols > 1 { coords.get(i, 1) } else { 0.0 }).collect();
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo).max(1e-12))
    };
    let ((x0, xr), (y0, yr)) = (span(&xs), span(&ys));
    let plot = SIZE - 2.0 * MARGIN;
    let legend_h = 16.0 * colors.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = SIZE + 140.0,
        h = SIZE.max(legend_h + 2.0 * MARGIN)
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, label) in labels.iter().enumerate() {
        let cx = MARGIN + (xs[i] - x0) / xr * plot;
        let cy = MARGIN + (1.0 - (ys[i] - y0) / yr) * plot;
        let _ = writeln!(svg, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{}"/>"#, colors[label]);
    }
    for (k, (label, color)) in colors.iter().enumerate() {
        let y = MARGIN + 16.0 * k as f64;
        let _ = writeln!(svg, r#"<circle cx="{:.0}" cy="{y:.0}" r="4" fill="{color}"/>"#, SIZE + 10.0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.0}" y="{:.0}" font-family="sans-serif" font-size="12">{}</text>"#,
            SIZE + 20.0,
            y + 4.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = rng::stream(seed, "test");
        Matrix { rows: n, cols: d, data: (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect() }
    }

    #[test]
    fn equidistant_points_give_uniform_rows() {
        let mut d = Matrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    d.data[i * 4 + j] = 2.0;
                }
            }
        }
        let c = row_conditionals(&d, 2.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert!((c.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perplexity_limit() {
        let d = squared_distances(&random_points(5, 3, 1));
        assert!(matches!(row_conditionals(&d, 4.5), Err(TsneError::PerplexityTooLarge { .. })));
        assert!(row_conditionals(&d, 3.0).is_ok());
        let pts = random_points(10, 3, 1);
        let cfg = TsneConfig { perplexity: 3.0, ..TsneConfig::default() };
        assert!(matches!(run_tsne_points(&pts, &cfg), Err(TsneError::PerplexityTooLarge { .. })));
        assert!(matches!(run_tsne_points(&random_points(3, 2, 1), &cfg), Err(TsneError::TooFewPoints(3))));
    }

    #[test]
    fn joint_is_symmetric_and_normalized() {
        let d = squared_distances(&random_points(30, 5, 2));
        let p = conditional_probabilities(&d, 5.0).unwrap();
        assert!((p.data.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..30 {
            for j in 0..30 {
                assert!(p.get(i, j) >= 0.0);
                assert_eq!(p.get(i, j), p.get(j, i));
            }
        }
    }

    #[test]
    fn two_points_are_stationary() {
        let p = Matrix { rows: 2, cols: 2, data: vec![0.0, 0.5, 0.5, 0.0] };
        let y = Matrix { rows: 2, cols: 2, data: vec![0.3, -1.0, 2.0, 0.5] };
        let g = kl_gradient(&p, &y).unwrap();
        assert!(g.data.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradient_shape_errors() {
        let p = Matrix::zeros(3, 3);
        let y = Matrix::zeros(4, 2);
        assert!(matches!(kl_gradient(&p, &y), Err(TsneError::DimensionMismatch(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            let x = random_points(6, 4, 100 + seed);
            let p = conditional_probabilities(&squared_distances(&x), 1.5).unwrap();
            let y = random_points(6, 2, 200 + seed);
            let g = kl_gradient(&p, &y).unwrap();
            let h = 1e-5;
            let mut fd = vec![0.0; y.data.len()];
            for k in 0..y.data.len() {
                let mut plus = y.clone();
                plus.data[k] += h;
                let mut minus = y.clone();
                minus.data[k] -= h;
                fd[k] = (kl_divergence(&p, &plus).unwrap() - kl_divergence(&p, &minus).unwrap()) / (2.0 * h);
            }
            let num: f64 = g.data.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(num / den < 1e-4, "seed {seed}: relative error {}", num / den);
        }
    }

    #[test]
    fn same_seed_same_layout() {
        let pts = random_points(20, 6, 3);
        let cfg = TsneConfig { perplexity: 5.0, iterations: 200, ..TsneConfig::default() };
        assert_eq!(run_tsne_points(&pts, &cfg).unwrap(), run_tsne_points(&pts, &cfg).unwrap());
    }

    #[test]
    fn kl_decreases_with_plain_descent() {
        let pts = random_points(15, 4, 4);
        let cfg = TsneConfig {
            perplexity: 4.0,
            learning_rate: 1e-2,
            momentum: 0.0,
            final_momentum: 0.0,
            early_exaggeration: 1.0,
            ..TsneConfig::default()
        };
        let y = random_points(15, 2, 5);
        let p = conditional_probabilities(&squared_distances(&pts), 4.0).unwrap();
        let mut state = TsneState::from_parts(p, y, cfg).unwrap();
        let mut last = state.kl();
        for _ in 0..300 {
            state.step();
            let kl = state.kl();
            assert!(kl <= last + 1e-9, "{kl} > {last}");
            last = kl;
        }
    }

    #[test]
    fn centroid_stays_at_origin() {
        let pts = random_points(16, 3, 6);
        let cfg = TsneConfig { perplexity: 4.0, iterations: 300, ..TsneConfig::default() };
        let y = run_tsne_points(&pts, &cfg).unwrap();
        for c in 0..2 {
            let mean = (0..16).map(|i| y.get(i, c)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6, "{mean}");
        }
    }

    #[test]
    fn svg_has_one_circle_per_point_plus_legend() {
        let y = random_points(5, 2, 7);
        let svg = scatter_svg(&y, &["a", "b", "a", "c", "b"]);
        assert_eq!(svg.matches("<circle").count(), 5 + 3);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn searched_rows_hit_target_entropy(seed in 0u64..1000, n in 12usize..40, perp in 2.0f64..8.0) {
            let d = squared_distances(&random_points(n, 5, seed));
            let c = row_conditionals(&d, perp).unwrap();
            for i in 0..n {
                let row = c.row(i);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!((entropy_bits(row) - perp.log2()).abs() < 1e-5);
            }
        }

        #[test]
        fn scale_invariance(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let d = squared_distances(&random_points(15, 3, seed));
            let mut ds = d.clone();
            ds.data.iter_mut().for_each(|v| *v *= scale);
            let a = conditional_probabilities(&d, 3.0).unwrap();
            let b = conditional_probabilities(&ds, 3.0).unwrap();
            for (x, y) in a.data.iter().zip(&b.data) {
                prop_assert!((x - y).abs() < 1e-8);
            }
        }

        #[test]
        fn gradient_rows_sum_to_zero(seed in 0u64..1000) {
            let p = conditional_probabilities(&squared_distances(&random_points(10, 3, seed)), 3.0).unwrap();
            let g = kl_gradient(&p, &random_points(10, 2, seed + 1)).unwrap();
            for c in 0..2 {
                prop_assert!((0..10).map(|i| g.get(i, c)).sum::<f64>().abs() < 1e-10);
            }
        }
    }
}
