//! Inputs shared by the benchmarks.

use qnode_core::source::poisson_times;
use qnode_core::{Channel, Scenario, TimeTagStream};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Two independent Poisson streams of the given rate over `duration` seconds.
pub fn poisson_streams(rate: f64, duration: f64, seed: u64) -> (TimeTagStream, TimeTagStream) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = poisson_times(rate, 0.0, duration, &mut rng);
    let b = poisson_times(rate, 0.0, duration, &mut rng);
    (
        TimeTagStream::from_times(&a, Channel::Idler).expect("sorted times"),
        TimeTagStream::from_times(&b, Channel::Signal).expect("sorted times"),
    )
}

/// The 3 µs storage fixture shortened to `duration` seconds.
pub fn stored_scenario(duration: f64) -> Scenario {
    let mut sc = Scenario::bundled("calibrated_afc_3us").expect("bundled fixture");
    sc.run.duration = duration;
    sc.analysis.setting_duration = Some(duration);
    sc
}
