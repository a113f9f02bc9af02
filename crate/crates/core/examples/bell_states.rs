//! Polarization algebra: Bell states, waveplates, joint analyzer
//! probabilities and the state heralded by the hub's Bell measurement.
//!
//! ```bash
//! cargo run --example bell_states
//! ```

use qswap::bsm::{herald_probability, heralded_state};
use qswap::chsh::{chsh_s, correlation_e, JointCounts};
use qswap::engine::config::ChshSettings;
use qswap::polarization::{
    apply_local, bell_state, hwp_operator, joint_projection_prob, BellKind, PolarizationOperator,
};

fn e_exact(rho: &qswap::polarization::TwoQubitState, a: f64, b: f64) -> qswap::chsh::Correlation {
    let p = |x, y| joint_projection_prob(rho, x, y);
    correlation_e(&JointCounts::uniform([
        p(a, b),
        p(a + 90.0, b + 90.0),
        p(a, b + 90.0),
        p(a + 90.0, b),
    ]))
    .unwrap()
}

fn main() -> qswap::Result<()> {
    let phi = bell_state(BellKind::PhiPlus);

    // A HWP at θ on the first photon maps H to the 2θ linear analyzer.
    let hwp = hwp_operator(22.5)?;
    let rotated = apply_local(&hwp, &PolarizationOperator::identity(), &phi)?;
    println!(
        "P(H,H) after HWP 22.5 on photon 1: {:.4}",
        rotated.population(0, 0)
    );

    println!("\nswapping two phi+ pairs, psi- herald:");
    println!(
        "{:>8} {:>12} {:>10} {:>10}",
        "overlap", "P(herald)", "purity", "F(psi-)"
    );
    let target = bell_state(BellKind::PsiMinus);
    for v in [0.0, 0.5, 0.8, 1.0] {
        let p = herald_probability(&phi, &phi, BellKind::PsiMinus, v)?;
        let s = heralded_state(&phi, &phi, BellKind::PsiMinus, v)?;
        println!(
            "{v:>8.2} {p:>12.5} {:>10.4} {:>10.4}",
            s.purity(),
            s.overlap(&target)
        );
    }

    let s = heralded_state(&phi, &phi, BellKind::PsiMinus, 0.8)?;
    let set = ChshSettings::default();
    let an = |h: f64| 2.0 * h;
    let e = [
        e_exact(&s, an(set.a), an(set.b)),
        e_exact(&s, an(set.a), an(set.b_prime)),
        e_exact(&s, an(set.a_prime), an(set.b)),
        e_exact(&s, an(set.a_prime), an(set.b_prime)),
    ];
    let r = chsh_s(e, set);
    println!("\nS of the heralded state at overlap 0.8: {:.4}", r.s);
    Ok(())
}
