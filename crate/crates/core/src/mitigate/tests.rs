// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::oracle::{solve_instant, PdnConfig};

fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, scale: f64) -> TileGrid {
    TileGrid::from_vec(w, h, 1.0, (0..w * h).map(|_| rng.gen::<f64>() * scale).collect()).unwrap()
}

#[test]
fn selection_edge_cases() {
    let g = TileGrid::from_vec(2, 2, 1.0, vec![0.01, 0.02, 0.03, 0.04]).unwrap();
    assert!(select_hotspots(&g, 0.05, 10).is_empty());
    assert!(select_hotspots(&g, 0.0, 0).is_empty());
    assert_eq!(select_hotspots(&g, 0.015, 10), vec![(1, 1), (0, 1), (1, 0)]);
    let tied = TileGrid::filled(3, 2, 1.0, 0.1);
    assert_eq!(select_hotspots(&tied, 0.0, 4), vec![(0, 0), (1, 0), (2, 0), (0, 1)]);
}

#[test]
fn selection_matches_sort_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_grid(&mut rng, 30, 20, 0.1);
    let mut all: Vec<(f64, usize, usize)> = (0..20).flat_map(|y| (0..30).map(move |x| (y, x))).map(|(y, x)| (g.get(x, y), x, y)).collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let expect: Vec<(usize, usize)> = all.iter().filter(|t| t.0 > 0.05).take(10).map(|t| (t.1, t.2)).collect();
    assert_eq!(select_hotspots(&g, 0.05, 10), expect);
}

#[test]
fn enhancement_basics() {
    let pdn = PdnConfig::default().build(8, 6).unwrap();
    assert_eq!(enhance_pg(&pdn, &[], 0.3).unwrap(), pdn);
    assert_eq!(enhance_pg(&pdn, &[(2, 2), (3, 2)], 0.0).unwrap(), pdn);
    assert!(enhance_pg(&pdn, &[(1, 1)], -0.1).is_err());
    assert!(enhance_pg(&pdn, &[(1, 1)], f64::NAN).is_err());
    assert!(matches!(enhance_pg(&pdn, &[(8, 0)], 0.1), Err(Error::Index(_))));
    let up = enhance_pg(&pdn, &[(3, 3)], 0.5).unwrap();
    // four edges and one tie gain half their conductance
    let cfg = PdnConfig::default();
    let added = 0.5 * (4.0 * cfg.g + cfg.g_pad);
    let total = pdn.total_edge_conductance() + pdn.total_pad_conductance();
    assert!((conductance_increase(&pdn, &up) - added / total).abs() < 1e-12);
}

#[test]
fn single_enhanced_tile_lowers_its_drop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pdn = PdnConfig::default().build(12, 12).unwrap();
    let i = random_grid(&mut rng, 12, 12, 1e-4);
    let before = solve_instant(&pdn, &i).unwrap();
    for &(x, y) in &[(0, 0), (5, 7), (11, 3)] {
        let after = solve_instant(&enhance_pg(&pdn, &[(x, y)], 0.2).unwrap(), &i).unwrap();
        assert!(after.get(x, y) < before.get(x, y));
    }
}

fn irmap(g: TileGrid) -> IrMap {
    IrMap::new(g, 0.9).unwrap()
}

#[test]
fn report_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pdn = PdnConfig::default().build(10, 10).unwrap();
    let b = random_grid(&mut rng, 10, 10, 0.1).map(|v| v + 0.002);
    let r = mitigation_report(&irmap(b.clone()), &irmap(b.clone()), 0.05, &[], 0.0, &pdn, &pdn).unwrap();
    assert_eq!(r.all_ir_improvement_mv, 0.0);
    assert_eq!(r.hotspot_ir_improvement_mv, Some(0.0));
    assert_eq!(r.violated_before, r.violated_after);
    assert_eq!(r.conductance_increase, 0.0);
    let a = b.map(|v| v - 0.001);
    let r = mitigation_report(&irmap(b.clone()), &irmap(a.clone()), 0.05, &[], 0.0, &pdn, &pdn).unwrap();
    assert!((r.all_ir_improvement_mv - 1.0).abs() < 1e-9);
    assert!((r.hotspot_ir_improvement_mv.unwrap() - 1.0).abs() < 1e-9);
    // counts agree with a direct recount
    assert_eq!(r.violated_before, b.data().iter().filter(|&&v| v > 0.05).count());
    assert_eq!(r.violated_after, a.data().iter().filter(|&&v| v > 0.05).count());
    assert_eq!(r.hotspots_before, retile(&b, 5).unwrap().data().iter().filter(|&&v| v > 0.05).count());
    let cold = mitigation_report(&irmap(b.clone()), &irmap(a), 0.5, &[], 0.0, &pdn, &pdn).unwrap();
    assert_eq!(cold.hotspot_ir_before_mv, None);
    assert!(mitigation_report(&irmap(b), &irmap(TileGrid::zeros(5, 5, 1.0)), 0.05, &[], 0.0, &pdn, &pdn).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn enhancing_everything_scales_every_drop(seed in any::<u64>(), s in 0.01f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pdn = PdnConfig::default().build(9, 7).unwrap();
        let i = random_grid(&mut rng, 9, 7, 1e-4);
        let all: Vec<_> = (0..7).flat_map(|y| (0..9).map(move |x| (x, y))).collect();
        let before = solve_instant(&pdn, &i).unwrap();
        let after = solve_instant(&enhance_pg(&pdn, &all, s).unwrap(), &i).unwrap();
        for (a, b) in after.data().iter().zip(before.data()) {
            prop_assert!((a * (1.0 + s) - b).abs() <= 1e-9 * b.abs().max(1e-12));
        }
    }
}
