//! Prolong single-time Rayleigh solutions to three times.
use mrayleigh::cli::{prolongation_structure, travelling_sine};
use mrayleigh::geometry::check_prolongation;
use mrayleigh::oracle::{integrate_single_time_rayleigh, SingleTimeOptions};

fn main() -> mrayleigh::Result<()> {
    let points: Vec<(f64, f64)> = (0..20)
        .flat_map(|i| (0..11).map(move |j| (0.3 * i as f64, 0.1 * j as f64)))
        .collect();

    let exact = check_prolongation(&travelling_sine(1.0), &prolongation_structure(0.0, 3)?, &points)?;
    println!("eps = 0: max residual {:.2e}", exact.max_abs);

    let eps = 0.1;
    let run = integrate_single_time_rayleigh(eps, |x| 0.5 * x.sin(), |x| -0.5 * x.cos(), SingleTimeOptions::default())?;
    let rep = check_prolongation(&run.field(), &prolongation_structure(eps, 3)?, &points)?;
    println!("eps = {eps}: {} steps, tau_R {:.2e}, max residual {:.2e}", run.steps(), run.tau_r, rep.max_abs);
    Ok(())
}
