//! Deterministic report emission.
//!
//! Reports are JSON documents whose numeric values are decimal strings
//! produced at the working precision (never binary floats), with object
//! keys in a fixed (sorted) order, so identical inputs and precision give
//! byte-identical files.

use rug::Float;
use serde_json::{json, Map, Value};

use jorlin_core::homological::BoundReport;
use jorlin_core::newton::{NewtonTrace, ScheduleTable};
use jorlin_core::num::float_to_string;
use jorlin_core::slices::InvarianceReport;
use jorlin_core::spectrum::{BoundConstants, DioEstimate, DivisorGrowth, QuasiResonanceTable};

pub fn fstr(f: &Float) -> Value {
    Value::String(float_to_string(f))
}

pub fn report_shell(command: &str, inputs: Value, results: Value) -> Value {
    json!({
        "command": command,
        "inputs": inputs,
        "results": results,
    })
}

pub fn qr_value(qr: &QuasiResonanceTable) -> Value {
    Value::Array(
        qr.entries
            .iter()
            .map(|e| {
                json!({
                    "class": e.class + 1,
                    "kappa": e.kappa,
                    "signature": e.signature,
                })
            })
            .collect(),
    )
}

pub fn dio_value(dio: &DioEstimate) -> Value {
    let conds: Vec<Value> = dio
        .conditions
        .iter()
        .map(|c| {
            json!({
                "id": c.id,
                "c0": fstr(&c.c0),
                "sigma": fstr(&c.sigma),
                "samples": c.samples.iter().map(|(m, d)| json!({
                    "degree": m,
                    "min_divisor": fstr(d),
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({
        "conditions": conds,
        "scan_degree": dio.scan_degree,
        "scan_bounded": true,
        "unit_class_size": dio.unit_class_size,
    })
}

pub fn constants_value(c: &BoundConstants) -> Value {
    json!({
        "gamma_p": fstr(&c.gamma_p),
        "uniform_inverse_bound": fstr(&c.big_gamma),
        "remainder_coeff": fstr(&c.remainder_coeff),
        "eps_max": fstr(&c.eps_max),
        "gamma_i": c.gamma_i.iter().map(fstr).collect::<Vec<_>>(),
        "signature_cap": c.signature_cap,
    })
}

pub fn growth_value(g: &DivisorGrowth) -> Value {
    json!({
        "rows": g.rows.iter().map(|(m, om)| json!({
            "degree": m,
            "omega": fstr(om),
        })).collect::<Vec<_>>(),
        "partial_sum": fstr(&g.partial_sum),
    })
}

pub fn bound_report_value(b: &BoundReport) -> Value {
    let mut params = Map::new();
    for (k, v) in &b.params {
        params.insert(k.clone(), Value::String(v.clone()));
    }
    json!({
        "condition": b.condition,
        "measured": fstr(&b.measured),
        "theoretical": fstr(&b.theoretical),
        "pass": b.pass,
        "skipped": b.skipped,
        "params": Value::Object(params),
    })
}

pub fn invariance_value(r: &InvarianceReport) -> Value {
    json!({
        "partition_ok": r.partition_ok,
        "invariance_ok": r.invariance_ok,
        "checked_indices": r.checked_indices,
        "convention": r.convention,
        "counterexamples": r.counterexamples.iter().take(16).map(|(a, comp, out, la, lo)| json!({
            "source": a.exps(),
            "component": comp + 1,
            "output": out.exps(),
            "source_label": la.to_string(),
            "output_label": lo.to_string(),
        })).collect::<Vec<_>>(),
    })
}

pub fn trace_value(t: &NewtonTrace) -> Value {
    json!({
        "rows": t.rows.iter().map(|r| json!({
            "nu": r.nu,
            "r_nu": fstr(&r.r_nu),
            "residual_order": order_str(r.residual_order),
            "residual_norm_upper": fstr(&r.residual_norm_upper),
            "residual_norm_lower": r.residual_norm_lower.as_ref().map(float_to_string),
            "c_nu": r.c_nu.as_ref().map(float_to_string),
        })).collect::<Vec<_>>(),
        "converged_at_truncation": t.converged_at_truncation,
        "diverged": t.diverged,
        "rescale_exp": t.rescale_exp,
    })
}

pub fn order_str(o: Option<u32>) -> String {
    match o {
        Some(v) => v.to_string(),
        None => "inf".into(),
    }
}

pub fn schedule_value(t: &ScheduleTable) -> Value {
    json!({
        "rows": t.rows.iter().map(|r| json!({
            "nu": r.nu,
            "by_recursion": r.by_recursion.to_string(),
            "by_closed_form": r.by_closed_form.to_string(),
            "halving_ok": r.halving_ok,
        })).collect::<Vec<_>>(),
        "contracts": t.contracts,
        "smallness_ok": t.smallness_ok,
    })
}

/// The newton CSV sidecar: one row per iteration, bit-exact reproducible
/// for fixed input and precision.
pub fn trace_csv(t: &NewtonTrace) -> String {
    let mut out =
        String::from("nu,r_nu,residual_order,residual_norm_upper,residual_norm_lower,C_nu\n");
    for r in &t.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.nu,
            float_to_string(&r.r_nu),
            order_str(r.residual_order),
            float_to_string(&r.residual_norm_upper),
            r.residual_norm_lower
                .as_ref()
                .map(float_to_string)
                .unwrap_or_default(),
            r.c_nu.as_ref().map(float_to_string).unwrap_or_default(),
        ));
    }
    out
}

/// Divisor-vs-degree CSV for the analyze command.
pub fn dio_csv(dio: &DioEstimate) -> String {
    let mut out = String::from("condition,degree,min_divisor\n");
    for c in &dio.conditions {
        for (m, d) in &c.samples {
            out.push_str(&format!("{},{},{}\n", c.id, m, float_to_string(d)));
        }
    }
    out
}

pub fn write_json(path: &std::path::Path, value: &Value) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text)
}
