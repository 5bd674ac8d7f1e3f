use rand::Rng;
use vinpaint::correspondence::{masked_correlation, normalize_channels, softmax_normalize};
use vinpaint::rng::{domain, SeedTree};
use vinpaint::{FeatureMap, Mask};

fn random_instance(rng: &mut impl Rng) -> (FeatureMap, Mask, FeatureMap, Mask) {
    let c = rng.random_range(1..=16);
    let (hr, wr) = (rng.random_range(1..=8), rng.random_range(1..=8));
    let (ht, wt) = (rng.random_range(1..=8), rng.random_range(1..=8));
    let f_r = FeatureMap::from_fn(c, hr, wr, |_, _, _| rng.random_range(-1.0..1.0));
    let f_t = FeatureMap::from_fn(c, ht, wt, |_, _, _| rng.random_range(-1.0..1.0));
    let m_r = Mask::from_fn(hr, wr, |_, _| rng.random_bool(0.7));
    let m_t = Mask::from_fn(ht, wt, |_, _| rng.random_bool(0.7));
    (normalize_channels(&f_r), m_r, normalize_channels(&f_t), m_t)
}

#[test]
fn correlation_and_softmax_match_double_loops() {
    let tree = SeedTree::new(1);
    for inst in 0..200 {
        let mut rng = tree.stream(domain::TEST, inst);
        let (f_r, m_r, f_t, m_t) = random_instance(&mut rng);
        let temperature = rng.random_range(0.05..1.5);
        let corr = masked_correlation(&f_r, &m_r, &f_t, &m_t).unwrap();
        let norm = softmax_normalize(&corr, &m_r, temperature).unwrap();

        let (nr, nt) = (f_r.pixels(), f_t.pixels());
        let mut oracle = vec![vec![0.0; nt]; nr];
        for (i, row) in oracle.iter_mut().enumerate() {
            for (j, o) in row.iter_mut().enumerate() {
                if m_r.at(i) && m_t.at(j) {
                    for k in 0..f_r.channels() {
                        *o += f_r.at(k, i) * f_t.at(k, j);
                    }
                }
            }
        }
        for j in 0..nt {
            let mut z = 0.0;
            for i in 0..nr {
                assert!((corr.get(i, j) - oracle[i][j]).abs() < 1e-6);
                if m_r.at(i) {
                    z += (oracle[i][j] / temperature).exp();
                }
            }
            assert_eq!(norm.column_valid[j], m_r.count_visible() > 0);
            for i in 0..nr {
                let expected = if m_r.at(i) {
                    (oracle[i][j] / temperature).exp() / z
                } else {
                    0.0
                };
                assert!(
                    (norm.weights.get(i, j) - expected).abs() < 1e-6,
                    "instance {inst} ({i}, {j})"
                );
            }
        }
    }
}
