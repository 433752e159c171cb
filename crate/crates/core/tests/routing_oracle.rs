use std::collections::VecDeque;

use multilora::sim::{GatewayPlacement, GridSpec, Scenario, Simulation};

fn bfs(adjacency: &[Vec<usize>], from: usize) -> Vec<Option<u32>> {
    let mut dist = vec![None; adjacency.len()];
    dist[from] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Runs discovery and learning and returns (node, learned, expected) for
/// every client whose distance disagrees with BFS.
fn mismatches(
    rows: u32,
    cols: u32,
    gateway: GatewayPlacement,
    seed: u64,
) -> Vec<(usize, Option<u8>, u32)> {
    let scenario = Scenario {
        grid: GridSpec {
            rows,
            cols,
            spacing_m: 4.0,
            gateway,
        },
        requests_per_node: 0,
        collisions: false,
        rng_seed: seed,
        ..Scenario::default()
    };
    let mut sim = Simulation::new(scenario).unwrap();
    let until = sim.forwarding_start();
    sim.run_until(until);
    let expected = bfs(sim.adjacency(), 0);
    let gw = sim.topology().gateway().address;
    sim.nodes()
        .iter()
        .enumerate()
        .skip(1)
        .filter_map(|(i, node)| {
            let want = expected[i]?;
            let got = node.router.routes().get(gw).map(|r| r.distance);
            (got != Some(want as u8)).then_some((i, got, want))
        })
        .collect()
}

#[test]
fn post_learning_distances_match_bfs_on_all_small_grids() {
    let mut checked = 0;
    for rows in 1..=5 {
        for cols in 1..=5 {
            if rows * cols < 2 {
                continue;
            }
            let placements = [
                GatewayPlacement::CenterCell,
                GatewayPlacement::Centroid,
                GatewayPlacement::Cell([0, 0]),
            ];
            for gateway in placements {
                for seed in [1, 2] {
                    let bad = mismatches(rows, cols, gateway, seed);
                    assert!(
                        bad.is_empty(),
                        "{rows}x{cols} {gateway:?} seed {seed}: {bad:?}"
                    );
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 24 * 3 * 2);
}

#[test]
fn next_hops_are_neighbours_one_step_closer() {
    let scenario = Scenario {
        grid: GridSpec {
            rows: 5,
            cols: 5,
            ..GridSpec::default()
        },
        requests_per_node: 0,
        collisions: false,
        rng_seed: 9,
        ..Scenario::default()
    };
    let mut sim = Simulation::new(scenario).unwrap();
    let until = sim.forwarding_start();
    sim.run_until(until);
    let dist = bfs(sim.adjacency(), 0);
    let gw = sim.topology().gateway().address;
    for (i, node) in sim.nodes().iter().enumerate().skip(1) {
        let route = node.router.routes().get(gw).expect("route to gateway");
        let hop = sim
            .topology()
            .sites
            .iter()
            .position(|s| s.address == route.next_hop)
            .unwrap();
        assert!(sim.adjacency()[i].contains(&hop));
        assert_eq!(dist[hop].unwrap() + 1, dist[i].unwrap());
    }
}
