//! CSV and plot-data artifacts.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use multihom_core::cell::Corrector;
use multihom_core::dns::StudyRow;
use multihom_core::effective::{FluxTable, MonotonicityReport};
use multihom_core::flux::StructureReport;
use multihom_core::macro_solver::SpaceTimeField;
use multihom_core::scale::{JointClassification, LimitClass, Role, ScaleExponents};

use crate::Failure;

pub const FLUX_TABLE_MAGIC: &str = "# multihom flux-table v1";

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, Failure> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn fmt_limits(ls: &[LimitClass]) -> String {
    ls.iter().map(|l| l.limit.to_string()).collect::<Vec<_>>().join(" ")
}

/// Columns: i, d_i, rho_i, partner_j, diagnostics. Indices are 1-based.
pub fn write_classification(path: &Path, exps: &ScaleExponents) -> Result<(), Failure> {
    let mut w = writer(path)?;
    w.write_record(["i", "d_i", "rho_i", "partner_j", "diagnostics"])?;
    for i in 0..exps.spatial_count() {
        let diag = format!(
            "temporal/spatial^2: [{}]; spatial^2/temporal: [{}]",
            fmt_limits(&exps.d_limits[i]),
            fmt_limits(&exps.rho_limits[i])
        );
        w.write_record([
            (i + 1).to_string(),
            exps.d[i].to_string(),
            exps.rho[i].to_string(),
            exps.partner[i].map(|j| (j + 1).to_string()).unwrap_or_default(),
            diag,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn classification_report(joint: &JointClassification, exps: &ScaleExponents) -> String {
    let mut s = String::new();
    let name = |r: Role, i: usize| match r {
        Role::Spatial => format!("spatial {}", i + 1),
        Role::Temporal => format!("temporal {}", i + 1),
    };
    let _ = writeln!(s, "merged list (slowest first):");
    for m in &joint.merged {
        let _ = writeln!(s, "  {:<12} {}", name(m.role, m.index), m.expr);
    }
    if joint.duplicate_pairs.is_empty() {
        let _ = writeln!(s, "duplicate pairs: none");
    }
    for (i, j, c) in &joint.duplicate_pairs {
        let _ = writeln!(s, "duplicate pair: spatial {} ~ temporal {} (ratio -> {c:.6})", i + 1, j + 1);
    }
    let ws = |w: &multihom_core::scale::WellSeparation| match w.witness {
        Some(l) if w.well_separated => format!("well-separated, witness l = {l}"),
        _ if w.separated => "separated, no witness".to_string(),
        _ => "not separated".to_string(),
    };
    let _ = writeln!(s, "spatial list: {}", ws(&joint.spatial));
    let _ = writeln!(s, "temporal list: {}", ws(&joint.temporal));
    let _ = writeln!(s, "merged list: {}", ws(&joint.joint));
    for i in 0..exps.spatial_count() {
        let partner = exps.partner[i].map(|j| format!(" (resonates with temporal {})", j + 1)).unwrap_or_default();
        let _ = writeln!(s, "scale {}: d = {}, rho = {:.6}{partner}", i + 1, exps.d[i], exps.rho[i]);
    }
    s
}

/// Columns: y_index, s_index, value. `s_index` enumerates every parameter
/// point (kept fast times and slower cells) of the corrector.
pub fn write_corrector(path: &Path, c: &Corrector) -> Result<(), Failure> {
    let mut w = writer(path)?;
    w.write_record(["y_index", "s_index", "value"])?;
    for p in 0..c.params {
        for (y, v) in c.at(p).iter().enumerate() {
            w.write_record([y.to_string(), p.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_corrector(path: &Path) -> Result<Vec<(usize, usize, f64)>, Failure> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Versioned table: magic line, then `Xi,R,N`, then one row per node with
/// the multi-index, ξ and b.
pub fn write_flux_table(path: &Path, t: &FluxTable) -> Result<(), Failure> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{FLUX_TABLE_MAGIC}")?;
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(file);
    w.write_record(["Xi", "R", "N"])?;
    w.write_record([t.bound.to_string(), t.resolution.to_string(), t.dim.to_string()])?;
    let mut header = Vec::new();
    for prefix in ["i", "xi", "b"] {
        header.extend((1..=t.dim).map(|c| format!("{prefix}{c}")));
    }
    w.write_record(&header)?;
    let nodes = FluxTable::node_points(t.dim, t.bound, t.resolution);
    for (flat, xi) in nodes.iter().enumerate() {
        let mut rec = Vec::with_capacity(3 * t.dim);
        let mut r = flat;
        let mut idx = vec![0; t.dim];
        for c in (0..t.dim).rev() {
            idx[c] = r % t.resolution;
            r /= t.resolution;
        }
        rec.extend(idx.iter().map(usize::to_string));
        rec.extend(xi.iter().map(f64::to_string));
        rec.extend(t.values[flat * t.dim..(flat + 1) * t.dim].iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_flux_table(path: &Path) -> Result<FluxTable, Failure> {
    let text = std::fs::read_to_string(path)?;
    let bad = |m: &str| Failure::Config(format!("{}: {m}", path.display()));
    let (first, rest) = text.split_once('\n').ok_or_else(|| bad("empty file"))?;
    if first.trim_end() != FLUX_TABLE_MAGIC {
        return Err(bad("not a version 1 flux table"));
    }
    let mut r = csv::ReaderBuilder::new().flexible(true).has_headers(false).from_reader(rest.as_bytes());
    let mut records = r.records();
    let mut next = || -> Result<csv::StringRecord, Failure> { Ok(records.next().ok_or_else(|| bad("truncated"))??) };
    let head = next()?;
    if head.iter().collect::<Vec<_>>() != ["Xi", "R", "N"] {
        return Err(bad("expected the header Xi,R,N"));
    }
    let shape = next()?;
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("'{s}' is not a number")));
    let bound = num(&shape[0])?;
    let resolution = shape[1].parse::<usize>().map_err(|_| bad("R is not an integer"))?;
    let dim = shape[2].parse::<usize>().map_err(|_| bad("N is not an integer"))?;
    next()?;
    let mut values = Vec::new();
    for rec in records {
        let rec = rec?;
        if rec.len() != 3 * dim {
            return Err(bad("row with the wrong number of fields"));
        }
        for c in 0..dim {
            values.push(num(&rec[2 * dim + c])?);
        }
    }
    Ok(FluxTable::from_values(dim, bound, resolution, values)?)
}

/// Columns: t, x, value (or t, x1, x2, value).
pub fn write_field_csv(path: &Path, u: &SpaceTimeField) -> Result<(), Failure> {
    let mut w = writer(path)?;
    let mesh = &u.mesh;
    if mesh.dim == 1 {
        w.write_record(["t", "x", "value"])?;
    } else {
        w.write_record(["t", "x1", "x2", "value"])?;
    }
    for k in 0..u.levels() {
        let t = mesh.time(k).to_string();
        for (idx, v) in u.level(k).iter().enumerate() {
            let x = mesh.node(idx);
            if mesh.dim == 1 {
                w.write_record([t.clone(), x[0].to_string(), v.to_string()])?;
            } else {
                w.write_record([t.clone(), x[0].to_string(), x[1].to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One whitespace-separated block per time level, blocks separated by two
/// blank lines (gnuplot `index`).
pub fn write_field_plot(path: &Path, u: &SpaceTimeField) -> Result<(), Failure> {
    let mut f = BufWriter::new(File::create(path)?);
    let mesh = &u.mesh;
    let nx = mesh.axis_nodes(0);
    writeln!(f, "# {}", u.provenance)?;
    for k in 0..u.levels() {
        if k > 0 {
            writeln!(f, "\n")?;
        }
        writeln!(f, "# t = {}", mesh.time(k))?;
        for (idx, v) in u.level(k).iter().enumerate() {
            let x = mesh.node(idx);
            if mesh.dim == 1 {
                writeln!(f, "{} {}", x[0], v)?;
            } else {
                if idx > 0 && idx % nx == 0 {
                    writeln!(f)?;
                }
                writeln!(f, "{} {} {}", x[0], x[1], v)?;
            }
        }
    }
    f.flush()?;
    Ok(())
}

/// Columns: eps, M_x, M_t, error; plus a two-column plot file.
pub fn write_study(csv_path: &Path, plot_path: &Path, rows: &[StudyRow]) -> Result<(), Failure> {
    let mut w = writer(csv_path)?;
    w.write_record(["eps", "M_x", "M_t", "error"])?;
    for r in rows {
        w.write_record([r.eps.to_string(), r.m_x.to_string(), r.m_t.to_string(), r.error.to_string()])?;
    }
    w.flush()?;
    let mut f = BufWriter::new(File::create(plot_path)?);
    writeln!(f, "# eps error")?;
    for r in rows {
        writeln!(f, "{} {}", r.eps, r.error)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_study(path: &Path) -> Result<Vec<StudyRow>, Failure> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let (eps, m_x, m_t, error): (f64, usize, usize, f64) = rec?;
        rows.push(StudyRow { eps, m_x, m_t, error });
    }
    Ok(rows)
}

/// Columns: quantity, value.
pub fn write_structure_report(path: &Path, r: &StructureReport) -> Result<(), Failure> {
    let mut w = writer(path)?;
    w.write_record(["quantity", "value"])?;
    let rows = [
        ("samples", r.samples as f64),
        ("declared_C0", r.declared.c0),
        ("declared_C1", r.declared.c1),
        ("declared_alpha", r.declared.alpha),
        ("measured_C0", r.measured_c0),
        ("measured_C1", r.measured_c1),
        ("max_growth", r.max_growth),
        ("max_periodicity_deviation", r.max_periodicity_dev),
    ];
    for (k, v) in rows {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: bin_lower, count; the first row holds min and max quotient.
pub fn write_monotonicity(path: &Path, r: &MonotonicityReport) -> Result<(), Failure> {
    let mut w = writer(path)?;
    w.write_record(["bin_lower", "count"])?;
    for (lo, n) in &r.histogram {
        w.write_record([lo.to_string(), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
