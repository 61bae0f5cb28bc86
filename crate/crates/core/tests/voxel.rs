use proptest::prelude::*;
use radnav_core::geodesy::LocalEnu;
use radnav_core::radiation::{sim_rng, RadiationMeasurement};
use radnav_core::voxel::{extract_mesh, ColoredMesh, ColormapSpec, GridSpec, InsertOutcome, VoxelGrid, VoxelMirror};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec() -> GridSpec {
    GridSpec::centered(2.0, [20, 20, 10])
}

fn random_measurements(seed: u64, n: usize) -> Vec<RadiationMeasurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| RadiationMeasurement {
            timestamp_s: i as f64 * 0.5,
            position: LocalEnu::new(rng.random_range(-25.0..25.0), rng.random_range(-25.0..25.0), rng.random_range(-12.0..12.0)),
            counts: rng.random_range(0..200),
            integration_dt_s: *[0.1, 0.5, 1.0 / 3.0].get(rng.random_range(0..3)).unwrap(),
        })
        .collect()
}

fn fuse(ms: &[RadiationMeasurement]) -> VoxelGrid {
    let mut grid = VoxelGrid::new(spec()).unwrap();
    for m in ms {
        grid.insert_measurement(m);
    }
    grid
}

#[test]
fn outside_measurements_are_ignored() {
    let mut grid = VoxelGrid::new(spec()).unwrap();
    let far = RadiationMeasurement { timestamp_s: 0.0, position: LocalEnu::new(500.0, 0.0, 0.0), counts: 9, integration_dt_s: 1.0 };
    assert_eq!(grid.insert_measurement(&far), InsertOutcome::Ignored);
    assert_eq!(grid.ignored(), 1);
    assert_eq!(grid.revision(), 0);
    assert_eq!(grid.observed_count(), 0);
}

#[test]
fn streamed_deltas_rebuild_the_grid() {
    let ms = random_measurements(3, 400);
    let mut grid = VoxelGrid::new(spec()).unwrap();
    let mut mirror = VoxelMirror::new(spec().dims);
    for chunk in ms.chunks(7) {
        let since = mirror.revision();
        for m in chunk {
            grid.insert_measurement(m);
        }
        mirror.apply(grid.revision(), &grid.delta_since(since).unwrap()).unwrap();
    }
    assert_eq!(mirror.len(), grid.observed_count());
    assert_eq!(mirror.snapshot(), grid.delta_since(0).unwrap());
}

#[test]
fn mesh_round_trips_through_binary() {
    let grid = fuse(&random_measurements(5, 50));
    let mesh = extract_mesh(&grid, &ColormapSpec::default(), 0.0);
    assert_eq!(mesh.vertices.len(), grid.observed_count() * 8);
    assert_eq!(mesh.triangles.len(), grid.observed_count() * 12);
    let back = ColoredMesh::read_binary(mesh.to_binary().as_slice()).unwrap();
    assert_eq!(back, mesh);
    let strict = extract_mesh(&grid, &ColormapSpec::default(), 1e9);
    assert!(strict.vertices.is_empty());
}

#[test]
fn pooled_estimate_over_seeded_detector() {
    let mut rng = sim_rng(21, 2);
    let rate = 12.0;
    let mut grid = VoxelGrid::new(spec()).unwrap();
    for i in 0..2000 {
        let counts = radnav_core::radiation::sample_counts(rate, 0.5, &mut rng).unwrap();
        let m = RadiationMeasurement { timestamp_s: i as f64, position: LocalEnu::ZERO, counts, integration_dt_s: 0.5 };
        grid.insert_measurement(&m);
    }
    let idx = spec().locate(&LocalEnu::ZERO).unwrap();
    let est = grid.voxel_rate(idx).unwrap().unwrap();
    let sigma = (rate / 1000.0).sqrt();
    assert!((est - rate).abs() < 3.0 * sigma, "{est}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_is_permutation_invariant(seed in any::<u64>(), n in 1usize..300) {
        let ms = random_measurements(seed, n);
        let reference = fuse(&ms).accumulator_table();
        let mut shuffled = ms.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xabcd));
        prop_assert_eq!(fuse(&shuffled).accumulator_table(), reference);
    }

    #[test]
    fn colors_are_monotone_in_rate(a in 0.0..5000.0f64, b in 0.0..5000.0f64) {
        let cm = ColormapSpec::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(cm.parameter(lo) <= cm.parameter(hi));
        let c = cm.colorize(lo);
        prop_assert_eq!(c[3], 200);
    }
}
