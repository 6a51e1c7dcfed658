use diffmark::metrics::{
    fid_from_features, frechet_distance, inception_score_from_probs, precision_recall_knn,
    FeatureSet, FeatureSource,
};
use diffmark::rng::{standard_normal, substream, streams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if i == j { (a[i][i] - s).sqrt() } else { (a[i][j] - s) / l[j][j] };
        }
    }
    l
}

/// `|mu1 - mu2|^2 + tr C1 + tr C2 - 2 sum sqrt(eig(L^T C2 L))` with `C1 = L L^T`.
fn fid_oracle(mu1: &[f64], c1: &[Vec<f64>], mu2: &[f64], c2: &[Vec<f64>]) -> f64 {
    let n = mu1.len();
    let l = cholesky(c1);
    let m: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).map(|(a, b)| l[a][i] * c2[a][b] * l[b][j]).sum()).collect())
        .collect();
    let cross: f64 = jacobi_eigenvalues(m).iter().map(|e| e.max(0.0).sqrt()).sum();
    let d2: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    d2 + (0..n).map(|i| c1[i][i] + c2[i][i]).sum::<f64>() - 2.0 * cross
}

fn random_spd(rng: &mut impl Rng, n: usize) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| standard_normal::<f64, _>(rng)).collect()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 }).collect())
        .collect()
}

fn to_matrix(a: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), a.len(), |i, j| a[i][j])
}

#[test]
fn five_dim_pair_matches_independent_eigensolver() {
    let mut rng = substream(21, streams::ORACLE);
    for _ in 0..5 {
        let (c1, c2) = (random_spd(&mut rng, 5), random_spd(&mut rng, 5));
        let mu1: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu2: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = frechet_distance(
            &DVector::from_vec(mu1.clone()),
            &to_matrix(&c1),
            &DVector::from_vec(mu2.clone()),
            &to_matrix(&c2),
        )
        .unwrap();
        let want = fid_oracle(&mu1, &c1, &mu2, &c2);
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }
}

fn gaussian_cloud(seed: u64, rows: usize, dim: usize, source: FeatureSource) -> FeatureSet {
    let mut rng = substream(seed, streams::SYNTHETIC);
    let f = (0..rows * dim).map(|_| standard_normal::<f64, _>(&mut rng)).collect();
    FeatureSet::new(f, rows, dim, source, "gaussian").unwrap()
}

#[test]
fn independent_clouds_are_close() {
    let a = gaussian_cloud(1, 5000, 8, FeatureSource::Real);
    let b = gaussian_cloud(2, 5000, 8, FeatureSource::Generated);
    let fid = fid_from_features(&a, &b).unwrap();
    assert!(fid.value < 0.05, "{}", fid.value);
    assert!(!fid.rank_deficient);
}

fn brute_pr(real: &FeatureSet, gen: &FeatureSet, k: usize) -> (f64, f64) {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let radius = |s: &FeatureSet, i: usize| {
        let mut all: Vec<f64> = (0..s.rows).filter(|&j| j != i).map(|j| d(s.row(i), s.row(j))).collect();
        all.sort_by(f64::total_cmp);
        all[k - 1]
    };
    let cover = |manifold: &FeatureSet, probe: &FeatureSet| {
        let r: Vec<f64> = (0..manifold.rows).map(|i| radius(manifold, i)).collect();
        (0..probe.rows)
            .filter(|&p| (0..manifold.rows).any(|m| d(probe.row(p), manifold.row(m)) <= r[m]))
            .count() as f64
            / probe.rows as f64
    };
    (cover(real, gen), cover(gen, real))
}

#[test]
fn knn_matches_brute_force_on_shifted_clouds() {
    let real = gaussian_cloud(5, 300, 4, FeatureSource::Real);
    let mut gen = gaussian_cloud(6, 250, 4, FeatureSource::Generated);
    gen.features.iter_mut().step_by(4).for_each(|v| *v += 0.7);
    for k in [1, 3, 7] {
        assert_eq!(precision_recall_knn(&real, &gen, k).unwrap(), brute_pr(&real, &gen, k));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fid_is_symmetric_and_nonnegative(seed in 0u64..1000) {
        let a = gaussian_cloud(seed, 40, 3, FeatureSource::Real);
        let b = gaussian_cloud(seed + 1, 30, 3, FeatureSource::Generated);
        let ab = fid_from_features(&a, &b).unwrap().value;
        let ba = fid_from_features(&b, &a).unwrap().value;
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
    }

    #[test]
    fn inception_score_is_bounded(seed in 0u64..1000, classes in 2usize..8) {
        let mut rng = substream(seed, streams::ORACLE);
        let rows = 20;
        let mut probs = Vec::with_capacity(rows * classes);
        for _ in 0..rows {
            let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|v| v / s));
        }
        let (mean, std) = inception_score_from_probs(&probs, rows, classes, 2).unwrap();
        prop_assert!(mean >= 1.0 - 1e-12 && mean <= classes as f64 + 1e-12);
        prop_assert!(std >= 0.0);
    }
}
