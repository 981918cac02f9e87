mod common;

use pcrt::pipeline::Prepared;
use pcrt::synthgen::Shape;
use pcrt::vis::{build_visibility, visible_receivers};

use common::{synth, with_depth};

#[test]
fn matrix_matches_direct_segment_tests() {
    let s = synth(Shape::Room5Mat, 0.0, 2);
    let cfg = with_depth(2);
    let prep = Prepared::new(&s.scene, &cfg);
    let caster = prep.caster(&s.scene, &cfg);
    let vis = build_visibility(&caster);
    assert_eq!(vis.num_receivers(), 6);
    assert_eq!(vis.num_sets(), prep.sets.len());
    for (d, set) in prep.sets.iter().enumerate().step_by(37) {
        for (r, rx) in s.scene.receivers.iter().enumerate() {
            assert_eq!(vis.get(r, d), caster.test_visibility(rx, &set.reception_point), "rx {r} dps {d}");
        }
        let listed = visible_receivers(&vis, d).unwrap();
        assert!(listed.iter().all(|&r| vis.get(r, d)));
    }
    // the table top is hidden from below-table-height receivers somewhere in the room
    let visible = vis.count_visible();
    assert!(visible > 0 && visible < 6 * prep.sets.len());
    assert!(visible_receivers(&vis, prep.sets.len()).is_err());
}

#[test]
fn corridor_baffle_hides_far_half() {
    let s = synth(Shape::CorridorBox, 0.0, 1);
    let cfg = with_depth(2);
    let prep = Prepared::new(&s.scene, &cfg);
    let caster = prep.caster(&s.scene, &cfg);
    let vis = build_visibility(&caster);
    // the baffle hangs off the y = 0 wall: floor next to that wall on the
    // transmitter side is shadowed from the receiver at x = 15
    let shadowed = prep
        .sets
        .iter()
        .enumerate()
        .filter(|(_, d)| d.reception_point.x < 9.0 && d.reception_point.y < 0.6 && d.reception_point.z < 0.05)
        .filter(|(i, _)| !vis.get(0, *i))
        .count();
    assert!(shadowed > 0);
}
