// SPDX-License-Identifier: Apache-2.0

//! Fixtures shared by the kernel benchmarks.

use irdrop_core::decompose::{decompose, DecomposeParams};
use irdrop_core::design::{Cell, DesignMeta, PowerMapSet};
use irdrop_core::oracle::{generate_design, GenParams};

pub struct Fixture {
    pub meta: DesignMeta,
    pub cells: Vec<Cell>,
    pub maps: PowerMapSet,
}

/// A generated square die of `side` µm with `cells` cells, decomposed at
/// 2 µm tiles into `n` instants.
pub fn fixture(side: f64, cells: usize, n: usize) -> Fixture {
    let g = generate_design(&GenParams {
        name: format!("bench{cells}"),
        width: side,
        height: side,
        cells,
        ..GenParams::default()
    })
    .expect("valid generator parameters");
    let params = DecomposeParams::with_instants(2.0, n, g.meta.period).expect("valid decomposition parameters");
    let maps = decompose(&g.cells, &g.meta, &params).expect("decomposition");
    Fixture { meta: g.meta, cells: g.cells, maps }
}
