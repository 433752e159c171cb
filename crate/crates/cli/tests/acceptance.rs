//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Set `MULTILORA_FULL_SCALE=1` to also run the 10- versus 200-node scale
//! check at 33 repetitions (tens of minutes on one core).

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use multilora::codec::*;
use multilora::network::{Priority, PriorityQueues};
use multilora::phy::{time_on_air, RadioConfig};
use multilora::sim::audit::audit;
use multilora::sim::{run, GatewayPlacement, GridSpec, MetricsReport, Scenario, Setup, Simulation};
use multilora_cli::emit::{from_json, to_csv};
use multilora_cli::execute::summarize;
use multilora_cli::{execute, parse_plan, ExperimentPlan, Interval, StatsSummary};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

const TOA_TOLERANCE_MS: f64 = 0.01;
const CODEC_CASES: u32 = 10_000;
const APD_TOLERANCE_S: f64 = 1e-3;
const REPETITIONS: u32 = 33;
const SMOKE_REPETITIONS: u32 = 10;
const SMOKE_REQUESTS: u32 = 200;
const Z95: f64 = 1.96;
const MUX_BAND: (f64, f64) = (30.0, 50.0);

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn plans_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("plans")
}

fn plan(name: &str) -> ExperimentPlan {
    parse_plan(&plans_dir().join(name)).unwrap_or_else(|e| panic!("{e}"))
}

fn require(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn reps(s: &Scenario, base_seed: u64, n: u32) -> Vec<MetricsReport> {
    (0..n)
        .map(|r| {
            let mut s = s.clone();
            s.rng_seed = base_seed + r as u64;
            run(&s).expect("scenario runs")
        })
        .collect()
}

fn summary(xs: &[f64]) -> StatsSummary {
    StatsSummary::from_samples(xs, Interval::Normal).expect("samples")
}

fn ms(s: f64) -> String {
    format!("{:.2} ms", s * 1e3)
}

fn c1_time_on_air() -> Outcome {
    let cfg = |bw| RadioConfig {
        bandwidth_hz: bw,
        ..RadioConfig::default()
    };
    let a = time_on_air(128, &cfg(125_000)).map_err(|e| e.to_string())? * 1e3;
    let b = time_on_air(128, &cfg(250_000)).map_err(|e| e.to_string())? * 1e3;
    require(
        (a - 332.03).abs() <= TOA_TOLERANCE_MS,
        format!("125 kHz gave {a:.4} ms"),
    )?;
    require(
        (b - 166.02).abs() <= TOA_TOLERANCE_MS,
        format!("250 kHz gave {b:.4} ms"),
    )?;
    Ok(format!("128 B: {a:.3} ms at 125 kHz, {b:.3} ms at 250 kHz"))
}

fn c2_codec() -> Outcome {
    let hello = Packet::new(
        PacketType::Hello,
        1,
        NodeAddress(0xA1),
        NodeAddress::BROADCAST,
        NodeAddress::BROADCAST,
        7,
        vec![],
    );
    let wire = encode_packet(&hello).map_err(|e| e.to_string())?;
    require(
        wire.len() == HEADER_LEN && HEADER_LEN == 16,
        "header is not 16 bytes",
    )?;
    require(MAX_FRAME_LEN == 256, "max frame is not 256 bytes")?;
    let oversize = Packet {
        header: hello.header,
        payload: vec![0; MAX_PAYLOAD_LEN + 1],
    };
    require(encode_packet(&oversize).is_err(), "257-byte frame accepted")?;
    let entry = WireRouteEntry {
        destination: NodeAddress(1),
        distance: 1,
        sequence: 0,
        metric: 100,
        priority: 3,
    };
    let msgs = encode_route_message(
        &[entry; 31],
        RouteMessageHeader {
            source: NodeAddress(2),
            sequence: 0,
        },
    );
    require(MAX_ROUTES_PER_MESSAGE == 30, "route cap is not 30")?;
    require(
        msgs.len() == 2 && msgs[0].payload.len() == 30 * TABLE_ENTRY_LEN,
        "31 routes did not split 30 + 1",
    )?;
    let data = Packet::new(
        PacketType::Data,
        8,
        NodeAddress(0x100),
        NodeAddress(1),
        NodeAddress(0x101),
        1,
        vec![7; 112],
    );
    let (m, l) = fragment_data(&data).map_err(|e| e.to_string())?;
    require(
        data.frame_len() == 128
            && m.frame_len() == 72
            && l.frame_len() == 72
            && m.payload.len() == 56,
        "128-byte packet did not split into two 72-byte frames",
    )?;

    let packet = (
        prop::sample::select(vec![
            PacketType::Hello,
            PacketType::Route,
            PacketType::Data,
            PacketType::MoreSignificant,
            PacketType::LessSignificant,
        ]),
        any::<(u8, u32, u32, u32, u8)>(),
        prop::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD_LEN),
    )
        .prop_map(|(t, (ttl, s, d, nh, seq), payload)| {
            Packet::new(
                t,
                ttl,
                NodeAddress(s),
                NodeAddress(d),
                NodeAddress(nh),
                seq,
                payload,
            )
        });
    let mut runner = TestRunner::new(Config {
        cases: CODEC_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&packet, |p| {
            let bytes = encode_packet(&p).unwrap();
            prop_assert!(bytes.len() <= MAX_FRAME_LEN);
            prop_assert_eq!(decode_packet(&bytes).unwrap(), p.clone());
            if p.ptype() == PacketType::Data && p.payload.len() >= 2 {
                let (m, l) = fragment_data(&p).unwrap();
                prop_assert_eq!(reassemble(&m, &l).unwrap(), p);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{CODEC_CASES} random packets round-trip exactly"))
}

fn bfs(adj: &[Vec<usize>]) -> Vec<Option<u8>> {
    let mut d = vec![None; adj.len()];
    d[0] = Some(0u8);
    let mut q = VecDeque::from([0]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if d[v].is_none() {
                d[v] = Some(d[u].unwrap() + 1);
                q.push_back(v);
            }
        }
    }
    d
}

fn c3_routing_oracle() -> Outcome {
    let (mut nodes, mut matched, mut grids) = (0, 0, 0);
    for rows in 1..=5 {
        for cols in 1..=5 {
            if rows * cols < 2 {
                continue;
            }
            for gateway in [GatewayPlacement::CenterCell, GatewayPlacement::Centroid] {
                let s = Scenario {
                    grid: GridSpec {
                        rows,
                        cols,
                        spacing_m: 4.0,
                        gateway,
                    },
                    requests_per_node: 0,
                    collisions: false,
                    rng_seed: (rows * 10 + cols) as u64,
                    ..Scenario::default()
                };
                let mut sim = Simulation::new(s).map_err(|e| e.to_string())?;
                let t = sim.forwarding_start();
                sim.run_until(t);
                let want = bfs(sim.adjacency());
                if want.iter().any(Option::is_none) {
                    continue;
                }
                grids += 1;
                let gw = sim.topology().gateway().address;
                for (i, node) in sim.nodes().iter().enumerate().skip(1) {
                    nodes += 1;
                    if node.router.routes().get(gw).map(|r| r.distance) == want[i] {
                        matched += 1;
                    }
                }
            }
        }
    }
    require(
        matched == nodes,
        format!("{matched}/{nodes} nodes match BFS"),
    )?;
    Ok(format!(
        "{matched}/{nodes} nodes on {grids} grids match BFS hop counts"
    ))
}

fn c4_loss_free() -> Outcome {
    let s = Scenario {
        grid: GridSpec {
            rows: 1,
            cols: 2,
            ..GridSpec::default()
        },
        requests_per_node: 1,
        packet_size_bytes: 128,
        rng_seed: 1,
        ..Scenario::default()
    };
    let radio = &s.radios()[0];
    let reply = HEADER_LEN + multilora::app::REPLY_PAYLOAD_LEN;
    let oracle = time_on_air(128, radio).unwrap() + time_on_air(reply, radio).unwrap();
    let r = run(&s).map_err(|e| e.to_string())?;
    let apd = r.apd_s.ok_or("no reply")?;
    require(r.plr_percent == 0.0, format!("PLR {}%", r.plr_percent))?;
    require(
        (apd - oracle).abs() <= APD_TOLERANCE_S,
        format!("APD {} vs {}", ms(apd), ms(oracle)),
    )?;
    Ok(format!(
        "PLR 0%, APD {} vs ToA(128)+ToA({reply}) = {}",
        ms(apd),
        ms(oracle)
    ))
}

fn c5_setup_ordering() -> Outcome {
    let mut p = plan("small-scale.plan");
    p.plan.repetitions = REPETITIONS;
    let results = execute(&p, None).map_err(|e| e.to_string())?;
    let apd = |setup: Setup, size: usize| {
        results
            .points
            .iter()
            .find(|pt| pt.key.setup == setup && pt.key.packet_size == size)
            .and_then(|pt| pt.summary.as_ref()?.apd)
            .expect("sweep point with deliveries")
    };
    let (a1, a2, a3) = (
        apd(Setup::One, 128),
        apd(Setup::Two, 128),
        apd(Setup::Three, 128),
    );
    let detail = format!(
        "APD@128B S1 {} S2 {} S3 {}",
        ms(a1.mean),
        ms(a2.mean),
        ms(a3.mean)
    );
    require(
        a3.mean < a2.mean && a2.mean < a1.mean,
        format!("order broken: {detail}"),
    )?;
    require(!a3.overlaps(&a1), format!("S3/S1 CIs overlap: {detail}"))?;
    let sizes: Vec<f64> = [32, 64, 128, 256].map(|n| apd(Setup::One, n).mean).to_vec();
    require(
        sizes.windows(2).all(|w| w[0] < w[1]),
        format!("S1 APD by size not increasing: {sizes:?}"),
    )?;
    let size_detail: Vec<String> = sizes.iter().map(|s| ms(*s)).collect();

    // Multiplexing at three hops, reported only.
    let mux = plan("multiplexing.plan");
    let far = NodeAddress(0x100);
    let mut flow_apd = Vec::new();
    for (_, s) in mux.points() {
        let delays: Vec<f64> = reps(&s, mux.plan.base_seed, REPETITIONS)
            .iter()
            .filter_map(|r| r.flows.iter().find(|f| f.source == far)?.apd_s)
            .collect();
        flow_apd.push(summary(&delays).mean);
    }
    let reduction = 100.0 * (flow_apd[0] - flow_apd[1]) / flow_apd[0];
    let band = if (MUX_BAND.0..=MUX_BAND.1).contains(&reduction) {
        "inside"
    } else {
        "outside"
    };
    Ok(format!(
        "{detail}; S1 by size {}; 3-hop multiplexing cuts APD {reduction:.1}% ({band} the reported {}-{}% band)",
        size_detail.join(" < "),
        MUX_BAND.0,
        MUX_BAND.1
    ))
}

fn plr_at(
    base: &Scenario,
    setup: Setup,
    nodes: u32,
    seed: u64,
    n: u32,
) -> Result<StatsSummary, String> {
    let mut s = base.clone();
    s.setup = setup;
    s.grid = GridSpec::for_node_count(nodes, base.grid.spacing_m).map_err(|e| e.to_string())?;
    let plr: Vec<f64> = reps(&s, seed, n).iter().map(|r| r.plr_percent).collect();
    Ok(summary(&plr))
}

/// Lower bound of the 95% interval of `hi.mean - lo.mean`.
fn diff_lower_bound(hi: &StatsSummary, lo: &StatsSummary) -> f64 {
    (hi.mean - lo.mean) - Z95 * (hi.std_error.powi(2) + lo.std_error.powi(2)).sqrt()
}

fn c6_scale_trend() -> Outcome {
    let large = plan("large-scale.plan");
    let mut base = large.scenario.clone();
    let seed = large.plan.base_seed;
    base.requests_per_node = SMOKE_REQUESTS;

    let small = plr_at(&base, Setup::Three, 10, seed, SMOKE_REPETITIONS)?;
    let big = plr_at(&base, Setup::Three, 25, seed, SMOKE_REPETITIONS)?;
    let lb = diff_lower_bound(&big, &small);
    let mut detail = format!(
        "smoke S3 PLR 10 nodes {:.1}% vs 25 nodes {:.1}% (diff lower bound {lb:.2})",
        small.mean, big.mean
    );
    require(lb > 0.0, format!("direction not significant: {detail}"))?;

    let ordering: Vec<f64> = Setup::ALL
        .iter()
        .map(|&s| plr_at(&base, s, 100, seed, 3).map(|x| x.mean))
        .collect::<Result<_, _>>()?;
    detail += &format!(
        "; 10x10 PLR reported S1 {:.1}% S2 {:.1}% S3 {:.1}%",
        ordering[0], ordering[1], ordering[2]
    );

    if std::env::var_os("MULTILORA_FULL_SCALE").is_some() {
        let full = large.scenario.clone();
        let ten = plr_at(&full, Setup::Three, 10, seed, REPETITIONS)?;
        let two_hundred = plr_at(&full, Setup::Three, 200, seed, REPETITIONS)?;
        let lb = diff_lower_bound(&two_hundred, &ten);
        detail += &format!(
            "; full S3 PLR 10 nodes {:.1}% vs 200 nodes {:.1}% (lower bound {lb:.2})",
            ten.mean, two_hundred.mean
        );
        require(
            lb > 0.0,
            format!("full-scale direction not significant: {detail}"),
        )?;
    }
    Ok(detail)
}

fn c7_priority() -> Outcome {
    let corner = NodeAddress(0x100);
    let jitter = |name: &str| -> Result<StatsSummary, String> {
        let p = plan(name);
        let s = &p.points()[0].1;
        let xs: Vec<f64> = reps(s, p.plan.base_seed, REPETITIONS)
            .iter()
            .filter_map(|r| r.flows.iter().find(|f| f.source == corner)?.jitter_s)
            .collect();
        require(
            xs.len() as u32 == REPETITIONS,
            format!("{name}: corner flow lacks jitter in some runs"),
        )?;
        Ok(summary(&xs))
    };
    let prio = jitter("priority.plan")?;
    let base = jitter("priority-baseline.plan")?;
    let detail = format!(
        "corner flow jitter {} with priority 1 vs {} baseline",
        ms(prio.mean),
        ms(base.mean)
    );
    require(prio.mean <= base.mean, detail.clone())?;
    Ok(detail)
}

fn c8_determinism() -> Outcome {
    let mut p = plan("small-scale.plan");
    p.plan.repetitions = 3;
    p.scenario.requests_per_node = 50;
    let a = execute(&p, Some(1)).map_err(|e| e.to_string())?;
    let b = execute(&p, Some(4)).map_err(|e| e.to_string())?;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let files_a = multilora_cli::emit(&a, dirs[0].path()).map_err(|e| e.to_string())?;
    let files_b = multilora_cli::emit(&b, dirs[1].path()).map_err(|e| e.to_string())?;
    let read = |p: &Path| std::fs::read(p).unwrap();
    require(read(&files_a.csv) == read(&files_b.csv), "CSV bytes differ")?;
    require(
        read(&files_a.json) == read(&files_b.json),
        "JSON bytes differ",
    )?;
    let text = String::from_utf8(read(&files_a.json)).map_err(|e| e.to_string())?;
    let back = from_json(&text).map_err(|e| e.to_string())?;
    require(back == a, "JSON does not round-trip")?;
    require(
        to_csv(&back).unwrap().as_bytes() == read(&files_a.csv),
        "CSV differs when rebuilt from JSON",
    )?;
    let recomputed = back
        .points
        .iter()
        .all(|p| summarize(&p.samples, back.interval) == p.summary);
    require(recomputed, "summaries differ from their samples")?;
    Ok(format!(
        "{} sweep points x 3 reps identical across 1 and 4 workers",
        a.points.len()
    ))
}

fn c9_invariants() -> Outcome {
    let mut runs = 0;
    for setup in Setup::ALL {
        for seed in 0..6u64 {
            let s = Scenario {
                setup,
                packet_size_bytes: [32, 64, 128, 256][seed as usize % 4],
                requests_per_node: 15,
                request_gap_s: if seed % 2 == 0 { 0.0 } else { 2.0 },
                hello_period_s: 20.0,
                route_period_s: 40.0,
                rng_seed: seed,
                ..Scenario::default()
            };
            let mut sim = Simulation::new(s).map_err(|e| e.to_string())?;
            sim.enable_trace();
            sim.run_to_completion();
            let r = sim.report().map_err(|e| e.to_string())?;
            require(
                r.sent == r.received + r.timed_out,
                "delivered + timed_out != sent",
            )?;
            audit(&sim).map_err(|e| format!("{setup:?} seed {seed}: {e}"))?;
            runs += 1;
        }
    }

    let ops = prop::collection::vec((0u8..4, any::<u8>()), 1..300);
    let mut runner = TestRunner::new(Config {
        cases: 2_000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&ops, |ops| {
            let mut q = PriorityQueues::new(16);
            for (op, tag) in ops {
                if op == 3 {
                    let waiting: Vec<usize> = Priority::ALL.iter().map(|p| q.len_of(*p)).collect();
                    if let Some((_, got)) = q.pop() {
                        for higher in Priority::ALL.iter().filter(|p| **p < got) {
                            prop_assert_eq!(waiting[*higher as usize - 1], 0);
                        }
                    }
                } else {
                    let p = Packet::new(
                        PacketType::Data,
                        8,
                        NodeAddress(1),
                        NodeAddress(2),
                        NodeAddress(2),
                        tag,
                        vec![],
                    );
                    let _ = q.push(p, Priority::try_from(op + 1).unwrap());
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "{runs} traced runs audited (conservation, TTL, next hop, LBT, collisions); 2000 queue sequences strict"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("time-on-air golden values", c1_time_on_air),
        ("codec exactness", c2_codec),
        ("routing oracle equivalence", c3_routing_oracle),
        ("loss-free sanity", c4_loss_free),
        ("setup ordering", c5_setup_ordering),
        ("scale trend", c6_scale_trend),
        ("priority effect", c7_priority),
        ("determinism", c8_determinism),
        ("invariant suite", c9_invariants),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({secs:.1} s) {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({secs:.1} s) {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
