use mssfc::gradcheck::{
    analytic_gradients, fd_gradcheck, network_fixture, run_scope, Scope, COORDS_PER_PARAM,
    GRADCHECK_TOLERANCE,
};
use mssfc::{ParamStore, Rng, Tape};

fn assert_scope(scope: Scope) {
    let reports = run_scope(scope, &[1, 2, 3], false);
    for r in &reports {
        println!(
            "{:<20} seed={} max_rel_err={:.3e} worst={} coords={}",
            r.name, r.seed, r.max_rel_err, r.worst_param, r.coords
        );
    }
    for r in &reports {
        assert!(r.passed(), "{r:?} exceeds {GRADCHECK_TOLERANCE}");
    }
}

#[test]
fn ops_pass() {
    assert_scope(Scope::Ops);
}

#[test]
fn blocks_pass() {
    assert_scope(Scope::Blocks);
}

/// The full network has abs and max-pool kinks that a step of 1e-4 can
/// cross, while its smallest gradients need that step to stay above
/// round-off. A coordinate passes when some step in the ladder agrees.
#[test]
fn network_backward_matches_central_difference() {
    const STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];
    for seed in [1, 2, 3] {
        let (mut store, loss) = network_fixture(seed).unwrap();
        let analytic = analytic_gradients(&store, &loss).unwrap();
        let f = |s: &ParamStore<f64>| {
            let mut tape = Tape::new();
            let l = loss(&mut tape, s)?;
            Ok(tape.value(l).item())
        };
        let mut rng = Rng::with_stream(seed, 7);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let mut coords: Vec<usize> = (0..store.get(id).value.shape().numel()).collect();
            rng.shuffle(&mut coords);
            coords.truncate(COORDS_PER_PARAM);
            for i in coords {
                let best = STEPS
                    .iter()
                    .map(|&h| fd_gradcheck(&mut store, &f, id, &[i], &analytic[id.index()], h).unwrap())
                    .scan(f64::INFINITY, |best, e| {
                        let done = *best <= GRADCHECK_TOLERANCE;
                        *best = best.min(e);
                        (!done).then_some(*best)
                    })
                    .last()
                    .unwrap();
                let name = &store.get(id).name;
                assert!(best <= GRADCHECK_TOLERANCE, "seed {seed} {name}[{i}]: {best:.3e}");
            }
        }
    }
}
