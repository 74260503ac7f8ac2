use std::io::{self, Write};

use crate::train::{AblationReport, TrainReport};

/// `%g`-style formatting with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let s = format!("{x:.5e}");
        let (mantissa, e) = s.split_once('e').expect("scientific notation");
        format!("{}e{e}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `step,train_loss_nats,val_bpc,wall_ms`; `val_bpc` is empty on steps
/// without an evaluation.
pub fn write_train_csv<W: Write>(report: &TrainReport, mut out: W) -> io::Result<()> {
    writeln!(out, "step,train_loss_nats,val_bpc,wall_ms")?;
    for s in &report.steps {
        let val = s.val_bpc.map(sig6).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{}",
            s.step,
            sig6(s.train_loss_nats),
            val,
            sig6(s.wall_ms)
        )?;
    }
    Ok(())
}

/// `step,val_bpc_dual_ln,val_bpc_plain`, one row per evaluation.
pub fn write_ablation_csv<W: Write>(report: &AblationReport, mut out: W) -> io::Result<()> {
    writeln!(out, "step,val_bpc_dual_ln,val_bpc_plain")?;
    for (step, a, b) in report.paired_val() {
        writeln!(out, "{step},{},{}", sig6(a), sig6(b))?;
    }
    Ok(())
}
