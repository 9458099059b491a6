//! Frozen outputs of the seeded streams. A change here means every seeded
//! artifact (corpora, corruptions, checkpoints) changes too.

use depthac::Rng;
use rand::RngCore;

#[test]
fn root_stream() {
    let mut r = Rng::new(42);
    let got: Vec<u64> = (0..4).map(|_| r.next_u64()).collect();
    assert_eq!(got, [18441174466535290856, 5196004827485935373, 3343252943634804944, 6231915586556422926]);
}

#[test]
fn forked_stream() {
    let mut f = Rng::new(42).fork("model-init");
    let got: Vec<u64> = (0..4).map(|_| f.next_u64()).collect();
    assert_eq!(got, [4272789743537431456, 2843311901467000539, 5431384435070963758, 1737196652095492616]);
}

#[test]
fn derived_draws() {
    let mut r = Rng::new(7);
    let unit: Vec<f64> = (0..3).map(|_| r.unit()).collect();
    assert_eq!(unit, [0.03286016613328213, 0.9305068200790734, 0.06247978156879075]);
    let normal: Vec<f64> = (0..3).map(|_| r.standard_normal()).collect();
    assert_eq!(normal, [0.03821610887837257, 1.620482440459078, -1.1851725215162545]);
    let poisson: Vec<u64> = (0..3).map(|_| r.poisson(50.0).unwrap()).collect();
    assert_eq!(poisson, [52, 57, 57]);
    let below: Vec<usize> = (0..5).map(|_| r.below(10)).collect();
    assert_eq!(below, [9, 8, 6, 9, 2]);
    let mut v: Vec<u32> = (0..8).collect();
    r.shuffle(&mut v);
    assert_eq!(v, [7, 1, 3, 5, 4, 0, 6, 2]);
}

#[test]
fn forks_do_not_advance_the_parent() {
    let mut a = Rng::new(1);
    let _ = a.fork("x");
    let mut b = Rng::new(1);
    assert_eq!(a.next_u64(), b.next_u64());
    assert_ne!(Rng::new(1).fork("x").next_u64(), Rng::new(1).fork("y").next_u64());
}
