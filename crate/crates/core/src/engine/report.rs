use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{FrontMember, RunArtifacts, RunError};
use crate::scheduler::{decode, Chromosome, DecodedSystem};
use crate::sysmodel::{area_rows, gantt_rows, AreaRow, GanttRow};

pub const PARETO_CSV_HEADER: [&str; 6] = [
    "individual_id",
    "latency_cycles",
    "energy_pj",
    "area_mm2",
    "n_instances",
    "templates_used",
];

#[derive(Serialize)]
struct ParetoRecord<'a> {
    individual_id: usize,
    latency_cycles: f64,
    energy_pj: f64,
    area_mm2: f64,
    n_instances: usize,
    templates_used: Vec<&'a str>,
    chromosome: &'a Chromosome,
    decoded: &'a DecodedSystem,
    description: String,
}

#[derive(Serialize)]
struct GanttDoc {
    individual_id: usize,
    latency_cycles: f64,
    segments: Vec<GanttRow>,
}

#[derive(Serialize)]
struct AreaDoc {
    individual_id: usize,
    area_mm2: f64,
    instances: Vec<AreaRow>,
}

fn templates_used<'a>(a: &'a RunArtifacts, sys: &DecodedSystem) -> Vec<&'a str> {
    let mut ids: Vec<&str> = sys
        .instances
        .iter()
        .map(|i| a.problem.templates.get(i.template).id.as_str())
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<PathBuf, RunError> {
    fs::write(&path, contents).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}

fn json<T: Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

/// Writes every report file into `out`, returning the paths in write order.
pub fn emit_reports(a: &RunArtifacts, out: &Path) -> Result<Vec<PathBuf>, RunError> {
    fs::create_dir_all(out).map_err(|source| RunError::Io {
        path: out.display().to_string(),
        source,
    })?;
    let decoded: Vec<DecodedSystem> = a.front.iter().map(|m| decode(&a.problem, &m.chromosome)).collect();
    let mut written = Vec::new();

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PARETO_CSV_HEADER).expect("in-memory write");
    for (id, (m, sys)) in a.front.iter().zip(&decoded).enumerate() {
        let FrontMember { eval, .. } = m;
        w.write_record([
            id.to_string(),
            eval.latency.to_string(),
            eval.energy.to_string(),
            eval.area.to_string(),
            sys.instances.len().to_string(),
            templates_used(a, sys).join(";"),
        ])
        .expect("in-memory write");
    }
    written.push(write(out.join("pareto.csv"), w.into_inner().expect("in-memory flush"))?);

    let records: Vec<ParetoRecord> = a
        .front
        .iter()
        .zip(&decoded)
        .enumerate()
        .map(|(id, (m, sys))| ParetoRecord {
            individual_id: id,
            latency_cycles: m.eval.latency,
            energy_pj: m.eval.energy,
            area_mm2: m.eval.area,
            n_instances: sys.instances.len(),
            templates_used: templates_used(a, sys),
            chromosome: &m.chromosome,
            decoded: sys,
            description: m.chromosome.describe(&a.problem.am, &a.problem.templates),
        })
        .collect();
    written.push(write(out.join("pareto.json"), json(&records))?);

    for (id, (m, sys)) in a.front.iter().zip(&decoded).enumerate() {
        if let Some(timeline) = &m.eval.timeline {
            let doc = GanttDoc {
                individual_id: id,
                latency_cycles: m.eval.latency,
                segments: gantt_rows(&a.problem, sys, timeline),
            };
            written.push(write(out.join(format!("gantt-{id}.json")), json(&doc))?);
        }
        let doc = AreaDoc {
            individual_id: id,
            area_mm2: m.eval.area,
            instances: area_rows(&a.problem, sys, &m.eval.area_breakdown),
        };
        written.push(write(out.join(format!("area-{id}.json")), json(&doc))?);
    }

    written.push(write(out.join("space_report.json"), json(&a.space))?);

    let mut log = String::new();
    for g in &a.log {
        log.push_str(&serde_json::to_string(g).expect("stats serialize"));
        log.push('\n');
    }
    written.push(write(out.join("run_log.jsonl"), log)?);

    if let Some(s) = &a.ablation {
        written.push(write(out.join("ablation_summary.json"), json(s))?);
    }
    Ok(written)
}

/// Objective triples from a `pareto.csv` file's contents.
pub fn read_front_csv(text: &str) -> Result<Vec<[f64; 3]>, RunError> {
    let bad = |msg: String| RunError::Config(format!("front csv: {msg}"));
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column {name}")))
    };
    let cols = [col("latency_cycles")?, col("energy_pj")?, col("area_mm2")?];
    let mut points = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let mut p = [0.0; 3];
        for (k, &c) in cols.iter().enumerate() {
            let field = rec.get(c).unwrap_or("");
            p[k] = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("row {}: `{field}` is not a number", row + 1)))?;
        }
        points.push(p);
    }
    Ok(points)
}
