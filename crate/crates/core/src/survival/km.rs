use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::fsutil::atomic_write;
use crate::ingest::SurvivalLabel;
use crate::survival::RiskPrediction;

/// Anything with a follow-up time and a censoring flag.
pub trait Observation {
    fn time(&self) -> f64;
    fn censored(&self) -> bool;
}

impl Observation for SurvivalLabel {
    fn time(&self) -> f64 {
        self.time
    }
    fn censored(&self) -> bool {
        self.censored
    }
}

impl Observation for RiskPrediction {
    fn time(&self) -> f64 {
        self.time
    }
    fn censored(&self) -> bool {
        self.censored
    }
}

impl<T: Observation> Observation for &T {
    fn time(&self) -> f64 {
        (*self).time()
    }
    fn censored(&self) -> bool {
        (*self).censored()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KmStep {
    pub time: f64,
    pub at_risk: usize,
    pub events: usize,
    /// Survival from this time (inclusive) until the next step.
    pub survival: f64,
}

/// Product-limit estimate; one step per distinct event time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KaplanMeier {
    pub n_subjects: usize,
    pub steps: Vec<KmStep>,
}

impl KaplanMeier {
    /// Right-continuous step function; `1` before the first event.
    pub fn survival_at(&self, t: f64) -> f64 {
        let i = self.steps.partition_point(|s| s.time <= t);
        if i == 0 {
            1.0
        } else {
            self.steps[i - 1].survival
        }
    }

    /// `(time, S)` knots starting at `(0, 1)`.
    pub fn knots(&self) -> Vec<(f64, f64)> {
        std::iter::once((0.0, 1.0))
            .chain(self.steps.iter().map(|s| (s.time, s.survival)))
            .collect()
    }
}

/// A subject censored at `t` is still at risk for events at `t`.
pub fn kaplan_meier<O: Observation>(subjects: &[O]) -> KaplanMeier {
    let mut obs: Vec<(f64, bool)> = subjects.iter().map(|s| (s.time(), s.censored())).collect();
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut steps = Vec::new();
    let mut survival = 1.0;
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].0;
        let at_risk = obs.len() - i;
        let group = obs[i..].iter().take_while(|o| o.0 == t).count();
        let events = obs[i..i + group].iter().filter(|o| !o.1).count();
        if events > 0 {
            survival *= 1.0 - events as f64 / at_risk as f64;
            steps.push(KmStep {
                time: t,
                at_risk,
                events,
                survival,
            });
        }
        i += group;
    }
    KaplanMeier {
        n_subjects: obs.len(),
        steps,
    }
}

/// `time,S,group` rows, one block per curve, each starting at `(0, 1)`.
pub fn write_km_csv(curves: &[(&str, &KaplanMeier)], path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["time", "S", "group"])?;
    for (name, km) in curves {
        for (t, s) in km.knots() {
            writer.write_record([t.to_string(), s.to_string(), name.to_string()])?;
        }
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    atomic_write(path, &bytes)
}

const PALETTE: [&str; 4] = ["#1f5fbf", "#c0392b", "#2e8b57", "#8e44ad"];

/// Minimal step-plot SVG of the curves, with a legend.
pub fn km_svg(curves: &[(&str, &KaplanMeier)], title: &str) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let t_max = curves
        .iter()
        .flat_map(|(_, km)| km.steps.last().map(|s| s.time))
        .fold(1.0_f64, f64::max);
    let sx = |t: f64| pad + t / t_max * (w - 2.0 * pad);
    let sy = |s: f64| h - pad - s * (h - 2.0 * pad);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{pad},{pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">time (months), max {t_max:.1}</text>"#,
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(svg, r#"<text x="15" y="{pad}">S(t)</text>"#);
    for (i, (name, km)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = format!("M{:.2},{:.2}", sx(0.0), sy(1.0));
        for (t, s) in km.knots().into_iter().skip(1) {
            let _ = write!(d, " H{:.2} V{:.2}", sx(t), sy(s));
        }
        let _ = write!(d, " H{:.2}", sx(t_max));
        let _ = writeln!(svg, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="2"/>"#);
        let ly = pad + 20.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{} (n={})</text>"#,
            w - pad - 5.0,
            escape(name),
            km.n_subjects
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
