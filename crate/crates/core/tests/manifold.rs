use flowlab::manifold::{make_embedding, GlyphDistribution, Letter, RepConfig, RepresentationMap};
use flowlab::numeric::Tensor;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_na(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn glyph() -> GlyphDistribution {
    GlyphDistribution::builtin().unwrap()
}

#[test]
fn lossy_features_lose_exactly_k_directions() {
    let g = glyph();
    for (width, k) in [(64, 8), (32, 4)] {
        let map = RepresentationMap::new(RepConfig::lossy(width), &g, 5).unwrap();
        assert_eq!(map.config().effective_lost_rank(), k);

        let (wid, _) = *map.mlp().layers().last().unwrap();
        let sv = to_na(map.params().value(wid)).singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(sv[..k].iter().all(|s| *s <= 1e-10), "{:?}", &sv[..k]);
        assert!(sv[k] > 1e-3);

        let feats = map.encode(&g.sample(4096, 1).unwrap().points).unwrap();
        let mut fs: Vec<f64> = to_na(&feats).singular_values().iter().copied().collect();
        fs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(fs[..k].iter().all(|s| *s <= 1e-8), "{:?}", &fs[..k]);
    }
}

/// Least-squares fit of pixels from features through fixed random tanh
/// features plus the raw features, solved densely.
#[test]
fn full_rank_features_are_invertible() {
    let g = glyph();
    let map = RepresentationMap::new(RepConfig::default(), &g, 2).unwrap();
    let train = g.sample(8000, 10).unwrap();
    let test = g.sample(2000, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = map.width();
    let hidden = 400;
    let proj = DMatrix::from_fn(d, hidden, |_, _| rng.random_range(-1.0..1.0) / (d as f64).sqrt());
    let bias = DVector::from_fn(hidden, |_, _| rng.random_range(-1.0..1.0));
    let design = |pixels: &Tensor| {
        let f = to_na(&map.encode(pixels).unwrap());
        let mut z = &f * &proj;
        for mut row in z.row_iter_mut() {
            row.iter_mut().zip(bias.iter()).for_each(|(v, b)| *v = (*v + b).tanh());
        }
        let n = f.nrows();
        let mut x = DMatrix::zeros(n, d + hidden + 1);
        x.view_mut((0, 0), (n, d)).copy_from(&f);
        x.view_mut((0, d), (n, hidden)).copy_from(&z);
        x.column_mut(d + hidden).fill(1.0);
        x
    };
    let x = design(&train.points);
    let y = to_na(&train.points);
    let ridge = DMatrix::<f64>::identity(x.ncols(), x.ncols()) * 1e-8;
    let coef = (x.transpose() * &x + ridge)
        .cholesky()
        .unwrap()
        .solve(&(x.transpose() * &y));
    let pred = design(&test.points) * coef;
    let err = (pred - to_na(&test.points)).map(|v| v * v).mean();
    assert!(err <= 1e-3, "inverse mse {err}");
}

#[test]
fn letter_fraction_matches_mask_area() {
    let g = glyph();
    let n = 100_000;
    let p_area = g.area_fraction(Letter::P);
    let sigma = (p_area * (1.0 - p_area) / n as f64).sqrt();
    let mut fractions = vec![];
    for seed in 0..10 {
        let s = g.sample(n, seed).unwrap();
        let frac = s.labels.iter().filter(|l| **l == Letter::P).count() as f64 / n as f64;
        assert!(
            (frac - p_area).abs() <= 3.0 * sigma + 1e-12,
            "seed {seed}: {frac} vs {p_area}"
        );
        fractions.push(frac);
    }
    let spread =
        fractions.iter().cloned().fold(f64::MIN, f64::max) - fractions.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 0.02);
}

#[test]
fn glyph_moments_are_normalized() {
    let s = glyph().sample(10_000, 3).unwrap();
    let rows = s.points.to_rows();
    for c in 0..2 {
        let m = rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
        assert!(m.abs() <= 0.05);
    }
    let rms = (rows.iter().map(|r| r[0] * r[0] + r[1] * r[1]).sum::<f64>() / (2 * rows.len()) as f64).sqrt();
    assert!((rms - 1.0).abs() <= 0.05, "rms {rms}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn embedding_is_isometric(l in 1usize..6, extra in 1usize..40, seed in any::<u64>(), z in prop::collection::vec(-5.0f64..5.0, 6)) {
        let h = l + extra;
        let q = make_embedding(h, l, seed).unwrap();
        prop_assert!(q.orthonormality_error() <= 1e-10);
        let z = Tensor::row(&z[..l]).unwrap();
        let x = q.embed(&z).unwrap();
        let norm = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm(&x) - norm(&z)).abs() <= 1e-10);
        let back = q.project(&x).unwrap();
        for (a, b) in back.data().iter().zip(z.data()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        prop_assert!(q.orthogonal_residual(&x).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn projection_is_least_squares(l in 1usize..5, extra in 1usize..20, seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 24)) {
        let h = l + extra;
        let q = make_embedding(h, l, seed).unwrap();
        let z = q.project(&Tensor::row(&x[..h]).unwrap()).unwrap();
        let a = to_na(q.matrix());
        let oracle = a.clone().svd(true, true).solve(&DVector::from_column_slice(&x[..h]), 1e-14).unwrap();
        for (got, want) in z.data().iter().zip(oracle.iter()) {
            prop_assert!((got - want).abs() <= 1e-10);
        }
    }
}
