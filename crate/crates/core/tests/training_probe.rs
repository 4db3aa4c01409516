//! Training feasibility probe (run with --ignored); not part of the suite.

use std::time::Instant;

use wildgrid_core::ddpg::{evaluate, train_loop, ActorPolicy, Policy, TrainConfig};
use wildgrid_core::env::{DoneReason, Env, Scenario};
use wildgrid_core::geomap::GeoLayout;
use wildgrid_core::gridmodel::{builtin, Network};
use wildgrid_core::policies::{GroupedDecoder, DEFAULT_GEN_GROUPS, DEFAULT_TRIP_DISTANCE};
use wildgrid_core::wildfire::FireSource;
use wildgrid_core::Real;

fn scenario_env() -> Env {
    let net = Network::load_case(builtin::case("rts24-strict").unwrap()).unwrap();
    let layout = GeoLayout::parse(builtin::layout("rts24-strict").unwrap()).unwrap();
    let scenario = Scenario {
        horizon: 25,
        source: FireSource::Fixed { x: 280, y: 160 },
        ..Scenario::default()
    };
    Env::new(net, layout, scenario).unwrap()
}

#[test]
#[ignore]
fn probe_grouped_training_on_the_strict_scenario() {
    let env = scenario_env();
    let dec = GroupedDecoder::new(&env.net, DEFAULT_TRIP_DISTANCE, DEFAULT_GEN_GROUPS);
    let cfg = TrainConfig {
        episodes: 400,
        hidden: (64, 48),
        warmup: 500,
        eval_every: 40,
        eval_episodes: 3,
        seed: 1,
        ..TrainConfig::default()
    };

    let t = Instant::now();
    let out = train_loop(&env, &dec, &cfg).unwrap();
    println!("trained {} episodes in {:.1?}", cfg.episodes, t.elapsed());

    for chunk in out.log.chunks(50) {
        let deaths = chunk.iter().filter(|e| e.done_reason == DoneReason::NonConvergence).count();
        let mean: Real =
            chunk.iter().map(|e| e.total_penalty).sum::<Real>() / chunk.len() as Real;
        println!(
            "  episodes {:>3}-{:>3}: deaths {deaths}/{} mean_penalty {mean:.0}",
            chunk[0].episode,
            chunk.last().unwrap().episode,
            chunk.len()
        );
    }
    for r in &out.eval_rounds {
        println!("  eval after ep {:>4}: mean_penalty {:.0}", r.after_episode, r.mean_penalty);
    }

    let seeds: Vec<u64> = (0..30).map(|i| 1000 + i).collect();
    let best = &out.checkpoints[0];
    println!("best checkpoint from episode {} ({:.0})", best.episode, best.mean_penalty);
    let t = Instant::now();
    let stats = evaluate(&env, &seeds, 1, || {
        Box::new(ActorPolicy { actor: &best.actor, decoder: &dec }) as Box<dyn Policy>
    })
    .unwrap();
    let ended = stats.iter().filter(|s| s.ended_early).count();
    let mean: Real = stats.iter().map(|s| s.total_penalty).sum::<Real>() / stats.len() as Real;
    println!(
        "final eval: ended {ended}/{} mean_penalty {mean:.0} ({:.1?})",
        stats.len(),
        t.elapsed()
    );
}
