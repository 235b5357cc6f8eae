//! The two row problems behind the bounds: the largest and smallest value of
//! `sum p_j ln(p_j a_j) + sum p_j V_j` over an interval ambiguity set.

use entrobound::credal::{maximize, minimize, AmbiguityRow, MaxMode, Objective, OptimizerSettings};

fn main() -> entrobound::Result<()> {
    let row = AmbiguityRow::new(vec![0.1, 0.0, 0.2, 0.05], vec![0.5, 0.3, 0.6, 0.4])?;
    let obj = Objective::new(vec![4f64.ln(); 4], vec![0.0; 4], vec![0.3, -0.2, 0.0, 0.8], 1.0);

    for mode in [MaxMode::Exact, MaxMode::Heuristic, MaxMode::Certified] {
        let s = OptimizerSettings {
            max_mode: mode,
            ..OptimizerSettings::default()
        };
        let m = maximize(&row, &obj, &s)?;
        println!("max {mode:?}: {:.6} at {:?} (certificate {:?})", m.value, m.p, m.certificate);
    }
    let m = minimize(&row, &obj, &OptimizerSettings::default())?;
    println!("min: {:.6} at {:?} (gap {:.1e})", m.value, m.p, m.gap);
    Ok(())
}
