//! On-disk record formats.
//!
//! Scenes, query sets and demonstration datasets are JSON Lines: a header
//! object carrying `schema_version`, `kind` and the generator seed, then one
//! record per line. Floats go through shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::arm::ArmGeometry;
use crate::error::{Error, Result};
use crate::geometry::{BoxShape, Obstacle, Plane, Scene, Shape};
use crate::tasks::{Query, QuerySet};

pub const SCHEMA_VERSION: u32 = 1;

/// Fields every header shares.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Envelope {
    schema_version: u32,
    kind: String,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn write_line<T: Serialize>(w: &mut impl Write, v: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, v).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Write a header and records, one JSON object per line.
pub fn write_jsonl<H: Serialize, R: Serialize>(mut w: impl Write, header: &H, records: &[R]) -> Result<()> {
    write_line(&mut w, header)?;
    for r in records {
        write_line(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a header of the expected kind and every following record.
///
/// Blank lines are skipped. Errors carry the 1-based line number.
pub fn read_jsonl<H: DeserializeOwned, R: DeserializeOwned>(r: impl BufRead, kind: &str) -> Result<(H, Vec<R>)> {
    let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(s) if s.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let (hl, htext) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let htext = htext?;
    let env: Envelope = serde_json::from_str(&htext).map_err(|e| parse_err(hl, format!("header: {e}")))?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(parse_err(
            hl,
            format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", env.schema_version),
        ));
    }
    if env.kind != kind {
        return Err(parse_err(hl, format!("expected a `{kind}` file, found `{}`", env.kind)));
    }
    let header: H = serde_json::from_str(&htext).map_err(|e| parse_err(hl, format!("header: {e}")))?;
    let mut records = Vec::new();
    for (ln, text) in lines {
        let text = text?;
        records.push(serde_json::from_str(&text).map_err(|e| parse_err(ln, e.to_string()))?);
    }
    Ok((header, records))
}

pub fn create(path: impl AsRef<Path>) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn open(path: impl AsRef<Path>) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SceneHeader {
    schema_version: u32,
    kind: String,
    name: String,
    arm: String,
    seed: Option<u64>,
}

fn check_obstacle(o: &Obstacle, line: usize) -> Result<()> {
    let r = match &o.shape {
        Shape::Box(b) => BoxShape::new(b.center, b.half_extents, b.yaw).map(|_| ()),
        Shape::Plane(p) => Plane::new(p.normal, p.offset).map(|_| ()),
    };
    r.map_err(|e| parse_err(line, format!("obstacle `{}`: {e}", o.name)))
}

pub fn write_scene(w: impl Write, scene: &Scene) -> Result<()> {
    let header = SceneHeader {
        schema_version: SCHEMA_VERSION,
        kind: "scene".into(),
        name: scene.name.clone(),
        arm: scene.arm.name.clone(),
        seed: scene.seed,
    };
    write_jsonl(w, &header, &scene.obstacles)
}

/// Read a scene; the file must name the arm it was built for.
pub fn read_scene(r: impl BufRead, arm: Arc<ArmGeometry>) -> Result<Scene> {
    let (h, obstacles): (SceneHeader, Vec<Obstacle>) = read_jsonl(r, "scene")?;
    if h.arm != arm.name {
        return Err(parse_err(1, format!("scene is for arm `{}`, not `{}`", h.arm, arm.name)));
    }
    for (i, o) in obstacles.iter().enumerate() {
        check_obstacle(o, i + 2)?;
    }
    Ok(Scene {
        name: h.name,
        obstacles,
        arm,
        seed: h.seed,
    })
}

pub fn save_scene(path: impl AsRef<Path>, scene: &Scene) -> Result<()> {
    write_scene(create(path)?, scene)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    read_scene(open(path)?, ArmGeometry::franka_shared())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct QueryHeader {
    schema_version: u32,
    kind: String,
    task: String,
    seed: u64,
    count: usize,
}

pub fn write_queries(w: impl Write, set: &QuerySet) -> Result<()> {
    let header = QueryHeader {
        schema_version: SCHEMA_VERSION,
        kind: "queries".into(),
        task: set.task.clone(),
        seed: set.seed,
        count: set.queries.len(),
    };
    write_jsonl(w, &header, &set.queries)
}

pub fn read_queries(r: impl BufRead) -> Result<QuerySet> {
    let (h, queries): (QueryHeader, Vec<Query>) = read_jsonl(r, "queries")?;
    if h.count != queries.len() {
        return Err(parse_err(
            queries.len() + 1,
            format!("header declares {} queries, file has {}", h.count, queries.len()),
        ));
    }
    Ok(QuerySet {
        task: h.task,
        seed: h.seed,
        queries,
    })
}

pub fn save_queries(path: impl AsRef<Path>, set: &QuerySet) -> Result<()> {
    write_queries(create(path)?, set)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<QuerySet> {
    read_queries(open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{build_fixed_task, sample_query_set, task_spec};

    #[test]
    fn scene_round_trip() {
        for name in ["no_obstacles", "boxes", "three_shelves"] {
            let s = build_fixed_task(name).unwrap();
            let mut buf = Vec::new();
            write_scene(&mut buf, &s).unwrap();
            let back = read_scene(&buf[..], s.arm.clone()).unwrap();
            assert_eq!(back, s);
        }
        let t = task_spec("random_boxes_hard").unwrap();
        let s = t.scene(Some(123)).unwrap();
        let mut buf = Vec::new();
        write_scene(&mut buf, &s).unwrap();
        assert_eq!(read_scene(&buf[..], s.arm.clone()).unwrap(), *s);
    }

    #[test]
    fn query_round_trip_is_exact() {
        let t = task_spec("random_boxes_easy").unwrap();
        let set = sample_query_set(&t, 20, 5).unwrap();
        let mut buf = Vec::new();
        write_queries(&mut buf, &set).unwrap();
        assert_eq!(read_queries(&buf[..]).unwrap(), set);
    }

    #[test]
    fn unknown_schema_is_rejected() {
        let text = "{\"schema_version\":99,\"kind\":\"queries\",\"task\":\"x\",\"seed\":0,\"count\":0}\n";
        match read_queries(text.as_bytes()) {
            Err(Error::Parse { line: 1, message }) => assert!(message.contains("schema_version")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_record_reports_line() {
        let s = build_fixed_task("wall").unwrap();
        let mut buf = Vec::new();
        write_scene(&mut buf, &s).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("{\"name\":\"x\",\"kind\":\"box\"}\n");
        match read_scene(text.as_bytes(), s.arm.clone()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 5);
                assert!(message.contains("missing field"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let s = build_fixed_task("wall").unwrap();
        let mut buf = Vec::new();
        write_scene(&mut buf, &s).unwrap();
        assert!(matches!(read_queries(&buf[..]), Err(Error::Parse { line: 1, .. })));
    }
}
