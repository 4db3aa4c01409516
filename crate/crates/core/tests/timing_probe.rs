//! Ad-hoc wall-time probe (run with --ignored); not part of the suite.
use std::time::Instant;
use wildgrid_core::env::{Env, Scenario};
use wildgrid_core::geomap::GeoLayout;
use wildgrid_core::gridmodel::{builtin, Network};
use wildgrid_core::operator::Directive;
use wildgrid_core::wildfire::FireSource;

#[test]
#[ignore]
fn probe_rts24_episode_cost() {
    let net = Network::load_case(builtin::RTS24_CASE).unwrap();
    let layout = GeoLayout::parse(builtin::RTS24_LAYOUT).unwrap();
    let scenario = Scenario {
        horizon: 25,
        source: FireSource::Fixed { x: 280, y: 160 },
        ..Scenario::default()
    };
    let env = Env::new(net, layout, scenario).unwrap();

    let t0 = Instant::now();
    let mut st = env.reset(7);
    println!("reset (initial dispatch): {:?}", t0.elapsed());

    let action = Directive::keep_all(&env.net);
    let mut steps = 0;
    let t1 = Instant::now();
    while !st.done {
        let ts = Instant::now();
        let obs_t = Instant::now();
        let _v = env.observation_vector(&st);
        let obs_el = obs_t.elapsed();
        env.step(&mut st, &action).unwrap();
        steps += 1;
        if steps <= 3 || steps % 10 == 0 {
            println!("step {steps}: {:?} (obs {:?})", ts.elapsed(), obs_el);
        }
    }
    println!("episode: {} steps in {:?} -> {:?}/step", steps, t1.elapsed(), t1.elapsed() / steps);
    println!("done reason: {:?}", st.done_reason);
}
