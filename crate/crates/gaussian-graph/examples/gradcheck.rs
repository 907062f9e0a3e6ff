//! Verify every analytic gradient against central finite differences: the
//! prediction heads alone, a single graph layer with and without edges, and
//! the stacked two-layer network through pooling and the heads.
//!
//! ```sh
//! cargo run --example gradcheck
//! ```

use anyhow::Result;
use gaussian_graph::optim::{gradcheck, GradcheckComponent};

fn main() -> Result<()> {
    let seed = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(7u64);
    let components = [
        GradcheckComponent::Heads,
        GradcheckComponent::Layer { edged: false },
        GradcheckComponent::Layer { edged: true },
        GradcheckComponent::FullStack { edged: false },
        GradcheckComponent::FullStack { edged: true },
    ];
    let mut failed = false;
    for component in components {
        let report = gradcheck(component, seed)?;
        println!(
            "{:<22} {:>4} params  max rel err {:.3e}  {}",
            report.component,
            report.params_checked,
            report.max_rel_err,
            if report.passed { "PASS" } else { "FAIL" }
        );
        for failure in report.failures.iter().take(3) {
            println!(
                "    {}[{}]: analytic {:.6e} vs numeric {:.6e}",
                failure.param, failure.index, failure.analytic, failure.numeric
            );
        }
        failed |= !report.passed;
    }
    if failed {
        anyhow::bail!("gradient check failed");
    }
    Ok(())
}
