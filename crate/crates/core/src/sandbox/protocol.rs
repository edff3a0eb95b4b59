//! Newline-delimited JSON frames exchanged with the runtime process.
//!
//! Host to runtime:
//! `{"id", "method": "run_workflow", "params": {"source", "task", "entry_point"?}}`,
//! then one reply per helper request: `{"id", "ok": true, "result"}` or
//! `{"id", "ok": false, "error": {"kind", "message"}}`.
//!
//! Runtime to host: `{"id", "method": "helper", "params": {"name", "args"}}`
//! for each helper call, and finally
//! `{"id", "method": "done", "params": {"result": {...}}}` or
//! `{"id", "method": "done", "params": {"error": {"kind", "message", "trace"}}}`.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const MAX_FRAME_BYTES: usize = 4 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame exceeds {MAX_FRAME_BYTES} bytes")]
    TooLarge,
    #[error("frame is not valid JSON: {0}")]
    Json(String),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads one newline-terminated frame; `None` at end of stream.
pub fn read_frame(reader: &mut impl BufRead) -> Result<Option<Vec<u8>>, FrameError> {
    let mut buf = Vec::new();
    loop {
        let available = match reader.fill_buf() {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        };
        if available.is_empty() {
            return Ok(if buf.is_empty() { None } else { Some(buf) });
        }
        let (chunk, done) = match available.iter().position(|&b| b == b'\n') {
            Some(i) => (&available[..i], Some(i + 1)),
            None => (available, None),
        };
        if buf.len() + chunk.len() > MAX_FRAME_BYTES {
            return Err(FrameError::TooLarge);
        }
        buf.extend_from_slice(chunk);
        match done {
            Some(consumed) => {
                reader.consume(consumed);
                return Ok(Some(buf));
            }
            None => {
                let n = available.len();
                reader.consume(n);
            }
        }
    }
}

pub fn write_frame(writer: &mut impl Write, frame: &Value) -> Result<(), FrameError> {
    let mut bytes = serde_json::to_vec(frame).map_err(|e| FrameError::Json(e.to_string()))?;
    if bytes.len() > MAX_FRAME_BYTES {
        return Err(FrameError::TooLarge);
    }
    bytes.push(b'\n');
    writer.write_all(&bytes)?;
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub trace: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuntimeFrame {
    Helper { id: Value, name: String, args: Value },
    Done { id: Value, outcome: Result<Value, ErrorReport> },
}

pub fn parse_runtime_frame(bytes: &[u8]) -> Result<RuntimeFrame, FrameError> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| FrameError::Json(e.to_string()))?;
    let id = v.get("id").cloned().ok_or_else(|| FrameError::Malformed("missing id".into()))?;
    let method = v
        .get("method")
        .and_then(Value::as_str)
        .ok_or_else(|| FrameError::Malformed("missing method".into()))?;
    let params = v.get("params").cloned().unwrap_or(Value::Null);
    match method {
        "helper" => {
            let name = params
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| FrameError::Malformed("helper frame without name".into()))?
                .to_string();
            let args = params.get("args").cloned().unwrap_or_else(|| json!({}));
            Ok(RuntimeFrame::Helper { id, name, args })
        }
        "done" => {
            if let Some(err) = params.get("error") {
                let report: ErrorReport = serde_json::from_value(err.clone())
                    .map_err(|e| FrameError::Malformed(format!("bad error report: {e}")))?;
                Ok(RuntimeFrame::Done { id, outcome: Err(report) })
            } else if let Some(result) = params.get("result") {
                Ok(RuntimeFrame::Done { id, outcome: Ok(result.clone()) })
            } else {
                Err(FrameError::Malformed("done frame without result or error".into()))
            }
        }
        other => Err(FrameError::Malformed(format!("unknown method {other:?}"))),
    }
}

pub fn run_workflow_frame(id: &str, source: &str, task: &str, entry_point: Option<&str>) -> Value {
    let mut params = json!({"source": source, "task": task});
    if let Some(ep) = entry_point {
        params["entry_point"] = json!(ep);
    }
    json!({"id": id, "method": "run_workflow", "params": params})
}

pub fn reply_ok(id: &Value, result: Value) -> Value {
    json!({"id": id, "ok": true, "result": result})
}

pub fn reply_err(id: &Value, kind: &str, message: &str) -> Value {
    json!({"id": id, "ok": false, "error": {"kind": kind, "message": message}})
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn frames_split_on_newlines() {
        let mut r = Cursor::new(b"{\"a\":1}\n{\"b\":2}\npartial".to_vec());
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"{\"a\":1}");
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"{\"b\":2}");
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"partial");
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn oversized_frame_rejected() {
        let mut big = vec![b'x'; MAX_FRAME_BYTES + 1];
        big.push(b'\n');
        let mut r = io::BufReader::with_capacity(8192, Cursor::new(big));
        assert!(matches!(read_frame(&mut r), Err(FrameError::TooLarge)));
    }

    #[test]
    fn parses_helper_and_done_frames() {
        let h = parse_runtime_frame(br#"{"id":"h1","method":"helper","params":{"name":"call_llm","args":{"n":1}}}"#).unwrap();
        assert_eq!(h, RuntimeFrame::Helper { id: json!("h1"), name: "call_llm".into(), args: json!({"n":1}) });
        let d = parse_runtime_frame(br#"{"id":"r","method":"done","params":{"result":{"answer":"4"}}}"#).unwrap();
        assert_eq!(d, RuntimeFrame::Done { id: json!("r"), outcome: Ok(json!({"answer":"4"})) });
        let e = parse_runtime_frame(br#"{"id":"r","method":"done","params":{"error":{"kind":"NameError","message":"x"}}}"#).unwrap();
        assert!(matches!(e, RuntimeFrame::Done { outcome: Err(ErrorReport { ref kind, .. }), .. } if kind == "NameError"));
        assert!(parse_runtime_frame(br#"{"id":1,"method":"bogus"}"#).is_err());
        assert!(parse_runtime_frame(b"not json").is_err());
    }

    #[test]
    fn run_frame_includes_entry_point_only_when_given() {
        let f = run_workflow_frame("i", "src", "t", None);
        assert!(f["params"].get("entry_point").is_none());
        let f = run_workflow_frame("i", "src", "t", Some("solution"));
        assert_eq!(f["params"]["entry_point"], "solution");
    }
}
