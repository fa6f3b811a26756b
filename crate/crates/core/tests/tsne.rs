use rand_distr::{Distribution, Normal};
use spkraug::embedding::{EmbeddingSet, EmbeddingVector};
use spkraug::rng;
use spkraug::tsne::{self, Matrix, TsneConfig, TsneState};

fn two_clusters(seed: u64) -> EmbeddingSet {
    let mut r = rng::stream(seed, "test/clusters");
    let n = Normal::new(0.0, 1.0).unwrap();
    let vectors = (0..40)
        .map(|i| {
            let offset = if i < 20 { 0.0 } else { 10.0 };
            let values = (0..16).map(|_| offset + n.sample(&mut r)).collect();
            EmbeddingVector::new(format!("p{i:02}"), if i < 20 { "a" } else { "b" }, values)
        })
        .collect();
    EmbeddingSet::new(vectors).unwrap()
}

fn mean_distance(y: &Matrix, pairs: impl Iterator<Item = (usize, usize)>) -> f64 {
    let (mut sum, mut n) = (0.0, 0);
    for (i, j) in pairs {
        sum += y.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        n += 1;
    }
    sum / n as f64
}

#[test]
fn separated_clusters_stay_separated() {
    let set = two_clusters(1);
    let cfg = TsneConfig { perplexity: 10.0, ..TsneConfig::default() };
    let y = tsne::run_tsne(&set, &cfg).unwrap();
    assert_eq!((y.rows, y.cols), (40, 2));
    let intra = mean_distance(&y, (0..40).flat_map(|i| (i + 1..40).map(move |j| (i, j))).filter(|(i, j)| (*i < 20) == (*j < 20)));
    let inter = mean_distance(&y, (0..20).flat_map(|i| (20..40).map(move |j| (i, j))));
    assert!(inter > 3.0 * intra, "inter {inter} intra {intra}");
    assert_eq!(y, tsne::run_tsne(&set, &cfg).unwrap());
}

#[test]
fn optimization_lowers_kl() {
    let mut r = rng::stream(2, "test/random");
    let n = Normal::new(0.0, 1.0).unwrap();
    let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..10).map(|_| n.sample(&mut r)).collect()).collect();
    let points = Matrix::from_rows(&rows).unwrap();
    let cfg = TsneConfig { perplexity: 8.0, iterations: 400, ..TsneConfig::default() };
    let mut state = TsneState::new(&points, cfg).unwrap();
    let start = state.kl();
    while state.iteration() < 400 {
        state.step();
    }
    assert!(state.kl() < start, "{} -> {}", start, state.kl());
}

#[test]
fn projected_set_keeps_ids() {
    let set = two_clusters(3);
    let cfg = TsneConfig { perplexity: 5.0, iterations: 50, ..TsneConfig::default() };
    let p = tsne::project_set(&set, &cfg).unwrap();
    assert_eq!(p.dimension(), 2);
    for (a, b) in set.iter().zip(p.iter()) {
        assert_eq!((&a.utterance_id, &a.speaker_id), (&b.utterance_id, &b.speaker_id));
    }
}
