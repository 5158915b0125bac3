#![allow(dead_code)]

pub mod oracle;

use dgnnflow::event::{Event, Particle};
use proptest::prelude::*;

/// Largest f32 below pi.
pub const PHI_MAX: f32 = f32::from_bits(std::f32::consts::PI.to_bits() - 1);

fn particle(eta_max: f32) -> impl Strategy<Value = Particle> {
    (0.0f32..60.0, -eta_max..eta_max, -PHI_MAX..PHI_MAX, 0u16..8, 0u16..3)
        .prop_map(|(pt, eta, phi, a, b)| Particle::from_kinematics(pt, eta, phi, [a, b]))
}

/// Coordinates on a 0.1 grid, so many pairs sit exactly at common delta
/// values.
fn grid_particle() -> impl Strategy<Value = Particle> {
    (0.0f32..60.0, -20i32..=20, -31i32..=31, 0u16..8, 0u16..3)
        .prop_map(|(pt, i, j, a, b)| Particle::from_kinematics(pt, i as f32 * 0.1, j as f32 * 0.1, [a, b]))
}

/// Events of 1..=max_n particles, from dense clusters to spread out.
pub fn events(max_n: usize) -> impl Strategy<Value = Event> {
    let spread = prop_oneof![Just(0.5f32), Just(1.5f32), Just(5.0f32)];
    let particles = prop_oneof![
        3 => spread.prop_flat_map(move |eta_max| prop::collection::vec(particle(eta_max), 1..=max_n)),
        1 => prop::collection::vec(grid_particle(), 1..=max_n),
    ];
    (any::<u32>(), particles).prop_map(|(event_id, particles)| Event { event_id, particles })
}
