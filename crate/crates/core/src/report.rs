//! Plot-ready text renderings of analysis results: CSV with a header row and
//! 17-significant-digit floats (lossless binary64 round trip), JSON for
//! structured records. Output bytes depend only on the data, so identical
//! runs produce identical files.

use crate::hetero::{DistanceSample, HeteroclinicConnection, MeasuredAverageDiff, ScanResult};
use crate::impact::{ImpactSequence, TruncationReason};
use crate::integrator::AveragedTrajectory;
use crate::melnikov::{MelnikovProfile, ZeroRecord};
use crate::scalar::Real;

/// 17 significant digits; `nan`/`inf` spelled out.
pub fn fmt_float<R: Real>(x: R) -> String {
    let x = x.to_f64().unwrap_or(f64::NAN);
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn json_float<R: Real>(x: R) -> String {
    let x = x.to_f64().unwrap_or(f64::NAN);
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

/// `zeta,M` rows of a Melnikov profile.
pub fn melnikov_csv<R: Real>(profile: &MelnikovProfile<R>) -> String {
    let mut out = String::from("zeta,M\n");
    for (z, v) in profile.zetas.iter().zip(profile.values.iter()) {
        out.push_str(&fmt_float(*z));
        out.push(',');
        out.push_str(&fmt_float(*v));
        out.push('\n');
    }
    out
}

/// Zeros block: `{"zeros": [{"index": ..., "zeta_bar": ..., "slope": ...}]}`.
pub fn zeros_json<R: Real>(zeros: &[ZeroRecord<R>], non_simple: usize) -> String {
    let mut out = String::from("{\n  \"zeros\": [\n");
    for (i, z) in zeros.iter().enumerate() {
        let idx = match z.index {
            Some(n) => n.to_string(),
            None => "null".to_string(),
        };
        out.push_str(&format!(
            "    {{\"index\": {idx}, \"zeta_bar\": {}, \"slope\": {}}}{}\n",
            json_float(z.zeta_bar),
            json_float(z.slope),
            if i + 1 < zeros.len() { "," } else { "" }
        ));
    }
    out.push_str(&format!("  ],\n  \"non_simple\": {non_simple}\n}}\n"));
    out
}

/// Distance scan rows: `zeta,y_unstable,y_stable,delta,delta_over_eps,melnikov`.
pub fn distance_csv<R: Real>(rows: &[(DistanceSample<R>, R)], eps: R) -> String {
    let mut out = String::from("zeta,y_unstable,y_stable,delta,delta_over_eps,melnikov\n");
    for (d, m) in rows {
        let over = if eps > R::zero() { d.delta / eps } else { R::nan() };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt_float(d.zeta),
            fmt_float(d.y_unstable),
            fmt_float(d.y_stable),
            fmt_float(d.delta),
            fmt_float(over),
            fmt_float(*m),
        ));
    }
    out
}

fn reason_str(r: TruncationReason) -> &'static str {
    match r {
        TruncationReason::XManifoldReached => "x-manifold-reached",
        TruncationReason::MaxCount => "max-count",
        TruncationReason::Escape => "escape",
        TruncationReason::NearFold => "near-fold",
        TruncationReason::Failure => "failure",
    }
}

/// Impact sequence rows: `i,t,v,x,y,s,manifold_reason`; the truncation
/// reasons sit on the extreme rows of each direction.
pub fn impact_csv<R: Real>(seq: &ImpactSequence<R>) -> String {
    let mut out = String::from("i,t,v,x,y,s,manifold_reason\n");
    let first = seq.entries.first().map(|(i, _, _)| *i).unwrap_or(0);
    let last = seq.entries.last().map(|(i, _, _)| *i).unwrap_or(0);
    for (i, w, t) in &seq.entries {
        let reason = if *i == last && *i > 0 {
            reason_str(seq.forward_reason)
        } else if *i == first && *i < 0 {
            reason_str(seq.backward_reason)
        } else {
            ""
        };
        out.push_str(&format!(
            "{i},{},{},{},{},{},{reason}\n",
            fmt_float(*t),
            fmt_float(w.v),
            fmt_float(w.x),
            fmt_float(w.y),
            fmt_float(w.s),
        ));
    }
    out
}

/// Scan rows:
/// `theta,v,zero_index,zeta_bar,zeta_star_or_nan,avg_diff_first_order,status,relabel_flag`.
pub fn scan_csv<R: Real>(result: &ScanResult<R>) -> String {
    let mut out =
        String::from("theta,v,zero_index,zeta_bar,zeta_star_or_nan,avg_diff_first_order,status,relabel_flag\n");
    for c in &result.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt_float(c.theta),
            fmt_float(c.v),
            c.zero_index,
            fmt_float(c.zeta_bar.unwrap_or(R::nan())),
            fmt_float(c.zeta_star.unwrap_or(R::nan())),
            fmt_float(c.avg_diff_first_order.unwrap_or(R::nan())),
            c.status.as_str(),
            u8::from(c.relabel),
        ));
    }
    out
}

/// Per-connection JSON record with tolerances and timing supplied by the
/// caller (milliseconds; `None` omits the field for deterministic output).
pub fn connection_json<R: Real>(
    conn: &HeteroclinicConnection<R>,
    bisect_tol: R,
    distance_tol: R,
    wall_ms: Option<f64>,
) -> String {
    let z = &conn.z_star;
    let z0 = &conn.z_star_section;
    let mut out = String::from("{\n");
    out.push_str(&format!(
        "  \"connection\": \"{}\",\n",
        match conn.connection {
            crate::model::Connection::Up => "up",
            crate::model::Connection::Down => "down",
        }
    ));
    out.push_str(&format!(
        "  \"coords\": {{\"theta\": {}, \"v\": {}, \"s\": {}}},\n",
        json_float(conn.coords.theta),
        json_float(conn.coords.v),
        json_float(conn.coords.s)
    ));
    out.push_str(&format!(
        "  \"zero_index\": {},\n",
        conn.zero_index.map(|i| i.to_string()).unwrap_or("null".into())
    ));
    out.push_str(&format!("  \"zeta_bar\": {},\n", json_float(conn.zeta_bar)));
    out.push_str(&format!("  \"zeta_star\": {},\n", json_float(conn.zeta_star)));
    out.push_str(&format!("  \"y_stable\": {},\n", json_float(conn.y_stable)));
    out.push_str(&format!("  \"y_unstable\": {},\n", json_float(conn.y_unstable)));
    out.push_str(&format!(
        "  \"z_star_section\": [{}, {}, {}, {}, {}],\n",
        json_float(z0.u),
        json_float(z0.v),
        json_float(z0.x),
        json_float(z0.y),
        json_float(z0.s)
    ));
    out.push_str(&format!(
        "  \"z_star\": [{}, {}, {}, {}, {}],\n",
        json_float(z.u),
        json_float(z.v),
        json_float(z.x),
        json_float(z.y),
        json_float(z.s)
    ));
    out.push_str(&format!(
        "  \"delta_u_first_order\": {},\n",
        json_float(conn.delta_u_first_order)
    ));
    out.push_str(&format!(
        "  \"avg_diff_first_order\": {},\n",
        json_float(conn.avg_diff_first_order)
    ));
    out.push_str(&format!(
        "  \"measured_delta\": {},\n",
        json_float(conn.measured_delta)
    ));
    out.push_str(&format!(
        "  \"diagnostics\": {{\"distance_evaluations\": {}, \"classifications\": {}, \"ordinate_residual\": {}}},\n",
        conn.diagnostics.distance_evaluations,
        conn.diagnostics.classifications,
        json_float(conn.diagnostics.ordinate_residual)
    ));
    out.push_str(&format!(
        "  \"tolerances\": {{\"bisect_tol\": {}, \"distance_tol\": {}}}",
        json_float(bisect_tol),
        json_float(distance_tol)
    ));
    if let Some(ms) = wall_ms {
        out.push_str(&format!(",\n  \"wall_ms\": {ms:.3}\n"));
    } else {
        out.push('\n');
    }
    out.push_str("}\n");
    out
}

/// Running-average rows: `t,running_avg`.
pub fn average_csv<R: Real>(avg: &AveragedTrajectory<R>) -> String {
    let mut out = String::from("t,running_avg\n");
    for &(t, a) in &avg.samples {
        out.push_str(&format!("{},{}\n", fmt_float(t), fmt_float(a)));
    }
    out
}

/// Summary of a measured average-difference run.
pub fn measured_average_json<R: Real>(m: &MeasuredAverageDiff<R>) -> String {
    format!(
        "{{\n  \"diff_at_horizon\": {},\n  \"diff_tail\": {},\n  \"horizon\": {},\n  \"forward_escape\": {},\n  \"backward_escape\": {}\n}}\n",
        json_float(m.diff_at_horizon),
        json_float(m.diff_tail),
        json_float(m.horizon),
        m.forward_escape.map(json_float).unwrap_or("null".into()),
        m.backward_escape.map(json_float).unwrap_or("null".into()),
    )
}
