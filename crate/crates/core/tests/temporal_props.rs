use proptest::prelude::*;
use vinpaint::datagen::ProceduralTexture;
use vinpaint::temporal::{
    backward_warp, blend_final, estimate_flow, sequence_flows, warping_error, FlowField,
};
use vinpaint::FeatureMap;

#[test]
fn static_sequence_has_zero_warping_error() {
    let f = ProceduralTexture::new(4, 128.0).render(64, 64, 0.0, 0.0);
    let frames = vec![f; 5];
    let (flows, occl) = sequence_flows(&frames, 3, 4).unwrap();
    let we = warping_error(&frames, &flows, &occl).unwrap();
    assert_eq!(we.value, 0.0);
    assert!(!we.has_warning());
}

#[test]
fn integer_shifts_within_radius_are_exact() {
    let tex = ProceduralTexture::new(12, 256.0);
    let (h, w, r) = (64, 64, 4);
    for dy in -(r as i64)..=r as i64 {
        for dx in -(r as i64)..=r as i64 {
            let prev = tex.render(h, w, 20.0, 20.0);
            // prev(p + d) = cur(p)
            let cur = tex.render(h, w, 20.0 + dx as f64, 20.0 + dy as f64);
            let flow = estimate_flow(&prev, &cur, 3, r).unwrap();
            for y in r + 4..h - r - 4 {
                for x in r + 4..w - r - 4 {
                    assert_eq!(
                        flow.at(y * w + x),
                        (dx as f64, dy as f64),
                        "shift ({dx}, {dy}) at ({y}, {x})"
                    );
                }
            }
        }
    }
}

fn unit_map(c: usize, h: usize, w: usize) -> impl Strategy<Value = FeatureMap> {
    prop::collection::vec(0.0f64..1.0, c * h * w)
        .prop_map(move |v| FeatureMap::from_vec(c, h, w, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 500, ..ProptestConfig::default() })]

    #[test]
    fn blend_stays_between_inputs(
        raw in unit_map(3, 5, 6),
        prev in unit_map(3, 5, 6),
        m in unit_map(1, 5, 6),
        u in prop::collection::vec(-2.0f64..2.0, 30),
        v in prop::collection::vec(-2.0f64..2.0, 30),
    ) {
        let flow = FlowField::from_planes(5, 6, u, v).unwrap();
        let out = blend_final(&raw, &prev, &flow, &m).unwrap();
        let (warped, _) = backward_warp(&prev, &flow).unwrap();
        for p in 0..30 {
            for c in 0..3 {
                let (a, b) = (raw.at(c, p), warped.at(c, p));
                let o = out.at(c, p);
                prop_assert!(o >= a.min(b) - 1e-12 && o <= a.max(b) + 1e-12);
            }
        }
    }
}
