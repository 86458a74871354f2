//! CSV ingestion in the long `(zone_id, timestamp, target, features...)` layout.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::{AgentSchema, AgentSeries, MarketFrame};
use crate::error::{MarketError, Result};

/// Zonal and meridional wind components at 10 m and 100 m.
pub const WIND_FEATURES: [&str; 4] = ["u10", "v10", "u100", "v100"];

/// Schema for `zones` wind-farm agents with pre-normalized targets.
pub fn wind_schema(zones: impl IntoIterator<Item = u32>, capacity: f64) -> Vec<AgentSchema> {
    zones
        .into_iter()
        .map(|id| {
            AgentSchema::new(
                id,
                WIND_FEATURES.iter().map(|s| s.to_string()).collect(),
                capacity,
            )
        })
        .collect()
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    const FORMATS: [&str; 5] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
        "%Y%m%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .or_else(|| DateTime::parse_from_rfc3339(raw).ok().map(|d| d.naive_utc()))
}

struct ZoneRows {
    rows: Vec<(NaiveDateTime, f64, Vec<f64>)>,
}

/// Loads a long-format CSV, normalizes targets by capacity and aligns zones on
/// their common hourly range. Rows outside the common range are dropped and
/// counted in [`MarketFrame::dropped_rows`].
pub fn load_csv(path: &Path, schema: &[AgentSchema]) -> Result<MarketFrame> {
    for s in schema {
        s.validate()?;
    }
    if schema.is_empty() {
        return Err(MarketError::Schema("empty agent schema".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => MarketError::io(path, std::io::Error::other(e.to_string())),
            _ => MarketError::Csv(e),
        })?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MarketError::Schema(format!("missing column `{name}`")))
    };
    let zone_col = column("zone_id")?;
    let ts_col = column("timestamp")?;
    let target_col = column("target")?;
    let mut feature_cols = BTreeMap::new();
    for s in schema {
        let cols = s
            .feature_names
            .iter()
            .map(|n| column(n))
            .collect::<Result<Vec<_>>>()?;
        feature_cols.insert(s.agent_id, cols);
    }

    let mut zones: BTreeMap<u32, ZoneRows> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let line = line + 2;
        let zone: u32 = record
            .get(zone_col)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| MarketError::Schema(format!("line {line}: bad zone_id")))?;
        let Some(cols) = feature_cols.get(&zone) else {
            return Err(MarketError::Schema(format!(
                "line {line}: zone {zone} not declared in schema"
            )));
        };
        let ts = record
            .get(ts_col)
            .and_then(parse_timestamp)
            .ok_or_else(|| MarketError::Schema(format!("line {line}: bad timestamp")))?;
        let target: f64 = record
            .get(target_col)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| MarketError::Schema(format!("line {line}: bad or missing target")))?;
        let features = cols
            .iter()
            .map(|&c| {
                record
                    .get(c)
                    .filter(|v| !v.is_empty())
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        MarketError::Schema(format!(
                            "line {line}: missing or invalid value in `{}`",
                            &headers[c]
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        zones
            .entry(zone)
            .or_insert_with(|| ZoneRows { rows: Vec::new() })
            .rows
            .push((ts, target, features));
    }

    let hour = chrono::Duration::hours(1);
    let mut start = None::<NaiveDateTime>;
    let mut end = None::<NaiveDateTime>;
    for s in schema {
        let zone = zones.get_mut(&s.agent_id).ok_or_else(|| {
            MarketError::Schema(format!("zone {} has no rows", s.agent_id))
        })?;
        zone.rows.sort_by_key(|r| r.0);
        for w in zone.rows.windows(2) {
            if w[1].0 == w[0].0 {
                return Err(MarketError::Integrity(format!(
                    "zone {}: duplicate timestamp {}",
                    s.agent_id, w[0].0
                )));
            }
            if w[1].0 - w[0].0 != hour {
                return Err(MarketError::Integrity(format!(
                    "zone {}: gap between {} and {}",
                    s.agent_id, w[0].0, w[1].0
                )));
            }
        }
        for r in &zone.rows {
            if !(0.0..=s.capacity).contains(&r.1) {
                return Err(MarketError::Range(format!(
                    "zone {}: target {} outside [0, {}] at {}",
                    s.agent_id, r.1, s.capacity, r.0
                )));
            }
        }
        let first = zone.rows[0].0;
        let last = zone.rows[zone.rows.len() - 1].0;
        start = Some(start.map_or(first, |v| v.max(first)));
        end = Some(end.map_or(last, |v| v.min(last)));
    }
    let (start, end) = (start.expect("non-empty schema"), end.expect("non-empty schema"));
    if start > end {
        return Err(MarketError::Integrity(
            "zones share no common timestamps".into(),
        ));
    }

    let mut dropped = 0;
    let mut timestamps = Vec::new();
    let mut agents = Vec::with_capacity(schema.len());
    for s in schema {
        let zone = &zones[&s.agent_id];
        let kept: Vec<_> = zone
            .rows
            .iter()
            .filter(|r| r.0 >= start && r.0 <= end)
            .collect();
        dropped += zone.rows.len() - kept.len();
        if timestamps.is_empty() {
            timestamps = kept.iter().map(|r| r.0).collect();
        }
        let target = kept.iter().map(|r| r.1 / s.capacity).collect();
        let exogenous = (0..s.n_features)
            .map(|k| kept.iter().map(|r| r.2[k]).collect())
            .collect();
        agents.push(AgentSeries {
            schema: s.clone(),
            target: Some(target),
            exogenous,
        });
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows outside the common zone range");
    }
    Ok(MarketFrame::new(timestamps, agents, 0, true)?.with_dropped_rows(dropped))
}

/// Writes a frame in the long layout accepted by [`load_csv`]. Every agent must
/// have a target and share the first agent's feature names. Targets are written
/// in capacity units.
pub fn write_csv(frame: &MarketFrame, path: &Path) -> Result<()> {
    let first = frame
        .agents()
        .first()
        .ok_or_else(|| MarketError::Schema("frame has no agents".into()))?;
    let names = &first.schema.feature_names;
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["zone_id".to_string(), "timestamp".into(), "target".into()];
    header.extend(names.iter().cloned());
    writer.write_record(&header)?;
    for agent in frame.agents() {
        if &agent.schema.feature_names != names {
            return Err(MarketError::Schema(
                "long CSV layout needs identical feature names across agents".into(),
            ));
        }
        let target = agent.target.as_ref().ok_or_else(|| {
            MarketError::Schema(format!("agent {} has no target", agent.schema.agent_id))
        })?;
        for (t, ts) in frame.timestamps().iter().enumerate() {
            let mut row = vec![
                agent.schema.agent_id.to_string(),
                ts.format("%Y-%m-%dT%H:%M:%S").to_string(),
                format_value(target[t] * agent.schema.capacity),
            ];
            row.extend(agent.exogenous.iter().map(|x| format_value(x[t])));
            writer.write_record(&row)?;
        }
    }
    writer.flush().map_err(|e| MarketError::io(path, e))?;
    Ok(())
}

/// Writes one row per timestamp: every target then every covariate, named
/// `y<agent>` and `<agent>:<feature>`.
pub fn write_wide_csv(frame: &MarketFrame, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string()];
    for a in frame.agents() {
        if a.target.is_some() {
            header.push(format!("y{}", a.schema.agent_id));
        }
    }
    for a in frame.agents() {
        for name in &a.schema.feature_names {
            header.push(format!("{}:{}", a.schema.agent_id, name));
        }
    }
    writer.write_record(&header)?;
    for (t, ts) in frame.timestamps().iter().enumerate() {
        let mut row = vec![ts.format("%Y-%m-%dT%H:%M:%S").to_string()];
        for a in frame.agents() {
            if let Some(target) = &a.target {
                row.push(format_value(target[t]));
            }
        }
        for a in frame.agents() {
            row.extend(a.exogenous.iter().map(|x| format_value(x[t])));
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| MarketError::io(path, e))?;
    Ok(())
}

pub(crate) fn format_value(v: f64) -> String {
    // Shortest round-trip representation keeps files byte-stable.
    format!("{v:?}")
}
