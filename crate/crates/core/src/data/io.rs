use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrajectoryRecord;
use crate::error::{Error, Result};

/// Column layout of an input file. Every adapter maps onto
/// `scene_id, agent_id, frame, x, y`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adapter {
    /// Header `scene_id,agent_id,frame,x,y`, comma separated.
    #[default]
    Generic,
    /// Headerless whitespace-separated `frame agent x y`, one scene per file.
    /// The file stem becomes the scene id.
    EthUcy,
    /// `tracks.csv` layout: `recordingId → scene_id`, `trackId → agent_id`,
    /// `frame`, `xCenter → x`, `yCenter → y`. Other columns are ignored.
    Ind,
}

impl Adapter {
    fn columns(self) -> [&'static str; 5] {
        match self {
            Adapter::Generic | Adapter::EthUcy => ["scene_id", "agent_id", "frame", "x", "y"],
            Adapter::Ind => ["recordingId", "trackId", "frame", "xCenter", "yCenter"],
        }
    }
}

pub fn load_trajectories(path: &Path, adapter: Adapter, frame_period: f64) -> Result<Vec<TrajectoryRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match adapter {
        Adapter::EthUcy => {
            let scene = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            read_eth_ucy(file, &scene, frame_period)
        }
        _ => read_trajectories(file, adapter, frame_period),
    }
}

struct Row {
    scene: String,
    agent: String,
    frame: i64,
    x: f64,
    y: f64,
}

/// Read a headed CSV. Rows may come in any order.
pub fn read_trajectories(reader: impl Read, adapter: Adapter, frame_period: f64) -> Result<Vec<TrajectoryRecord>> {
    if adapter == Adapter::EthUcy {
        return read_eth_ucy(reader, "", frame_period);
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(adapter.columns()) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column `{name}`")))?;
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { row: line, message: e.to_string() })?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        rows.push(Row {
            scene: field(0).to_string(),
            agent: field(1).to_string(),
            frame: parse_frame(field(2), line)?,
            x: parse_real(field(3), adapter.columns()[3], line)?,
            y: parse_real(field(4), adapter.columns()[4], line)?,
        });
    }
    group(rows, frame_period)
}

fn read_eth_ucy(mut reader: impl Read, scene: &str, frame_period: f64) -> Result<Vec<TrajectoryRecord>> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cells: Vec<&str> = line.split_whitespace().collect();
        if cells.is_empty() {
            continue;
        }
        if cells.len() < 4 {
            return Err(Error::Parse {
                row: i + 1,
                message: format!("expected 4 fields, found {}", cells.len()),
            });
        }
        let frame = parse_real(cells[0], "frame", i + 1)?;
        rows.push(Row {
            scene: scene.to_string(),
            agent: format!("{}", parse_real(cells[1], "agent", i + 1)?),
            frame: frame.round() as i64,
            x: parse_real(cells[2], "x", i + 1)?,
            y: parse_real(cells[3], "y", i + 1)?,
        });
    }
    group(rows, frame_period)
}

fn parse_frame(s: &str, row: usize) -> Result<i64> {
    s.parse::<i64>().or_else(|_| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.fract() == 0.0 && v.is_finite())
            .map(|v| v as i64)
            .ok_or_else(|| Error::Parse {
                row,
                message: format!("frame `{s}` is not an integer"),
            })
    })
}

fn parse_real(s: &str, column: &str, row: usize) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            message: format!("{column} `{s}` is not a finite number"),
        }),
    }
}

fn group(rows: Vec<Row>, frame_period: f64) -> Result<Vec<TrajectoryRecord>> {
    if !(frame_period > 0.0) {
        return Err(Error::contract(format!("frame period must be positive, got {frame_period}")));
    }
    let mut tracks: BTreeMap<(String, String), Vec<(i64, f64, f64)>> = BTreeMap::new();
    for r in rows {
        tracks.entry((r.scene, r.agent)).or_default().push((r.frame, r.x, r.y));
    }
    tracks
        .into_iter()
        .map(|((scene_id, agent_id), mut pts)| {
            pts.sort_by_key(|p| p.0);
            if let Some(w) = pts.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::Format(format!(
                    "duplicate frame {} for agent {agent_id} in scene {scene_id}",
                    w[0].0
                )));
            }
            Ok(TrajectoryRecord {
                scene_id,
                agent_id,
                frames: pts.iter().map(|p| p.0).collect(),
                positions: pts.iter().map(|p| [p.1, p.2]).collect(),
                frame_period,
            })
        })
        .collect()
}
