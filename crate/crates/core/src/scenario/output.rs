//! Metrics CSV, trajectory and event JSON-lines dumps, SVG plots.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MetricsRow, Population};
use crate::engine::{Event, EventKind, Trajectory};
use crate::error::{Error, Result};
use crate::model::RoutingGame;
use crate::network::NetworkModel;
use crate::strategy::PeriodStrategy;

/// Column-oriented numeric table; `None` is an empty CSV field.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl MetricsTable {
    pub fn from_rows(rows: &[MetricsRow], tracked: &[usize]) -> Self {
        let mut columns = vec!["t".to_string(), "V_pred".into(), "V_impl".into()];
        for id in tracked {
            columns.push(format!("delta_phi_{id}"));
            columns.push(format!("J_pred_{id}"));
            columns.push(format!("J_impl_{id}"));
        }
        columns.push("delta_phi_all".into());
        columns.push("update_norm".into());
        let rows = rows
            .iter()
            .map(|r| {
                let mut v = vec![Some(r.t as f64), Some(r.v_pred), r.v_impl];
                for m in &r.tracked {
                    v.extend([m.delta_phi, Some(m.j_pred), m.j_impl]);
                }
                v.extend([r.delta_phi_all, r.update_norm]);
                v
            })
            .collect();
        Self { columns, rows }
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn write_metrics_csv(path: &Path, table: &MetricsTable) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(
            row.iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<MetricsTable> {
    let mut r = csv::ReaderBuilder::new().from_path(path)?;
    let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if columns.first().map(String::as_str) != Some("t") {
        return Err(Error::Config(format!(
            "{}: first column must be 't'",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>().map(Some).map_err(|_| {
                        Error::Config(format!(
                            "{}: line {}: bad number '{f}'",
                            path.display(),
                            k + 2
                        ))
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(MetricsTable { columns, rows })
}

/// One JSON object per line: a header describing the game, then one record
/// per instant with `phi` flattened agent-major, then slot, then path.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DumpRecord {
    Header {
        period: usize,
        n_agents: usize,
        n_paths: usize,
        layout: String,
        game: RoutingGame,
    },
    Step {
        t: usize,
        theta: usize,
        active: Vec<bool>,
        phi: Vec<f64>,
    },
}

const LAYOUT: &str = "agent-major, slot, path";

pub fn write_trajectory_dump(path: &Path, game: &RoutingGame, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = DumpRecord::Header {
        period: game.period,
        n_agents: game.n_agents(),
        n_paths: game.network.n_paths(),
        layout: LAYOUT.into(),
        game: game.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for t in 0..traj.len() {
        let rec = DumpRecord::Step {
            t,
            theta: traj.theta[t],
            active: traj.active[t].clone(),
            phi: traj.phi[t].as_slice().to_vec(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Final state read back from a trajectory dump.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpedState {
    /// Game with the activity pattern of the final instant.
    pub game: RoutingGame,
    pub t: usize,
    pub theta: usize,
    pub x: PeriodStrategy,
}

pub fn load_trajectory_dump(path: &Path) -> Result<DumpedState> {
    let bad =
        |line: usize, msg: String| Error::Config(format!("{}: line {line}: {msg}", path.display()));
    let reader = BufReader::new(File::open(path)?);
    let mut game: Option<RoutingGame> = None;
    let mut last: Option<(usize, usize, Vec<bool>, Vec<f64>)> = None;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DumpRecord = serde_json::from_str(&line).map_err(|e| bad(k + 1, e.to_string()))?;
        match rec {
            DumpRecord::Header { game: g, .. } => {
                if game.is_some() {
                    return Err(bad(k + 1, "second header".into()));
                }
                // re-run every constructor check on the deserialised parts
                let net = NetworkModel::new(
                    g.network.nodes().to_vec(),
                    g.network.links().to_vec(),
                    g.network.paths().to_vec(),
                )
                .map_err(|e| bad(k + 1, e.to_string()))?;
                let ext = g
                    .external
                    .checked()
                    .map_err(|e| bad(k + 1, e.to_string()))?;
                let g = RoutingGame::new(net, g.agents, g.price, ext, g.period)
                    .map_err(|e| bad(k + 1, e.to_string()))?;
                game = Some(g);
            }
            DumpRecord::Step {
                t,
                theta,
                active,
                phi,
            } => {
                if game.is_none() {
                    return Err(bad(k + 1, "step before header".into()));
                }
                last = Some((t, theta, active, phi));
            }
        }
    }
    let mut game = game.ok_or_else(|| bad(1, "missing header".into()))?;
    let (t, theta, active, phi) = last.ok_or_else(|| bad(1, "no step records".into()))?;
    if active.len() != game.n_agents() || theta >= game.period {
        return Err(bad(0, format!("step t={t} does not match the header")));
    }
    for (a, on) in game.agents.iter_mut().zip(active) {
        a.active = on;
    }
    let x = PeriodStrategy::from_flat(game.n_agents(), game.period, game.network.n_paths(), phi)
        .map_err(|e| bad(0, format!("step t={t}: {e}")))?;
    Ok(DumpedState { game, t, theta, x })
}

#[derive(Serialize)]
struct EventRecord<'a> {
    time: usize,
    kind: EventKind,
    group: Option<&'a str>,
    agents: &'a [usize],
}

/// JSON-lines log of the applied events.
pub fn write_events_log(path: &Path, pop: &Population, events: &[Event]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in events {
        let group = e.agents.first().and_then(|&a| pop.group_of(a));
        serde_json::to_writer(
            &mut w,
            &EventRecord {
                time: e.time,
                kind: e.kind,
                group,
                agents: &e.agents,
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn series(table: &MetricsTable, name: &str) -> Vec<(f64, f64)> {
    let t = table.column("t").unwrap_or_default();
    let v = table.column(name).unwrap_or_default();
    t.into_iter()
        .zip(v)
        .filter_map(|(t, v)| Some((t?, v?)))
        .filter(|(_, v)| v.is_finite())
        .collect()
}

fn bounds(all: &[&Vec<(f64, f64)>]) -> Option<((f64, f64), (f64, f64))> {
    let pts = all.iter().flat_map(|s| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    let mut any = false;
    for &(x, y) in pts {
        any = true;
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !any {
        return None;
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-12);
    Some(((x0, x1), (y0 - pad, y1 + pad)))
}

fn panel(
    area: &DrawingArea<SVGBackend, plotters::coord::Shift>,
    title: &str,
    table: &MetricsTable,
    names: &[String],
) -> Result<()> {
    let data: Vec<Vec<(f64, f64)>> = names.iter().map(|n| series(table, n)).collect();
    let Some(((x0, x1), (y0, y1))) = bounds(&data.iter().collect::<Vec<_>>()) else {
        return Ok(());
    };
    let plot_err = |e: String| Error::Plot(e);
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| plot_err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("t")
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    for (k, (name, pts)) in names.iter().zip(data).enumerate() {
        let color = Palette99::pick(k).to_rgba();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(|e| plot_err(e.to_string()))?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    Ok(())
}

/// Two stacked panels: potential series on top, strategy variation below.
pub fn plot_metrics(path: &Path, table: &MetricsTable) -> Result<()> {
    let root = SVGBackend::new(path, (960, 720)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| Error::Plot(e.to_string()))?;
    let (top, bottom) = root.split_vertically(360);
    let potentials: Vec<String> = ["V_pred", "V_impl"]
        .iter()
        .filter(|n| table.columns.iter().any(|c| c == *n))
        .map(|s| s.to_string())
        .collect();
    panel(&top, "potential", table, &potentials)?;
    let deltas: Vec<String> = table
        .columns
        .iter()
        .filter(|c| c.starts_with("delta_phi_"))
        .cloned()
        .collect();
    panel(&bottom, "strategy variation", table, &deltas)?;
    root.present().map_err(|e| Error::Plot(e.to_string()))?;
    Ok(())
}
