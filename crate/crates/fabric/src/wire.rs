//! Length-prefixed framing (4-byte big-endian length, canonical-JSON
//! payload) and the message set shared by the coordinator and broker.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::canonical::{from_canonical, to_canonical};
use crate::envelope::{ResultEnvelope, TaskEnvelope};

pub const MAX_FRAME: usize = 64 << 20;

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    if payload.len() > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
    }
    let mut buf = Vec::with_capacity(4 + payload.len());
    buf.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    buf.extend_from_slice(payload);
    w.write_all(&buf)?;
    w.flush()
}

/// `Ok(None)` on a clean end of stream before any byte of a frame.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame length {n} exceeds limit")));
    }
    let mut payload = vec![0u8; n];
    r.read_exact(&mut payload)?;
    Ok(Some(payload))
}

/// A published record as it appears on the wire and in topic logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicRecord {
    pub seq: u64,
    pub envelope: ResultEnvelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Message {
    Register {
        schema_version: String,
        worker_id: String,
        slots: usize,
        manifest: BTreeMap<String, String>,
    },
    RegisterAck {
        accepted: bool,
        reason: Option<String>,
        schema_version: String,
        experiment_id: String,
        manifest: BTreeMap<String, String>,
        broker_address: String,
        topic: String,
        heartbeat_interval: f64,
    },
    Heartbeat {
        worker_id: String,
        running: usize,
    },
    Task {
        envelope: TaskEnvelope,
    },
    TaskAck {
        task_id: String,
    },
    Cancel {
        task_id: String,
    },
    Shutdown,
    Sub {
        topic: String,
        from: u64,
    },
    Pub {
        topic: String,
        envelope: ResultEnvelope,
    },
    Poll {
        topic: String,
        cursor: u64,
        max_items: usize,
    },
    /// Reply to PUB (with the assigned sequence) and to POLL (with records).
    Ack {
        seq: Option<u64>,
        records: Vec<TopicRecord>,
        next_cursor: Option<u64>,
    },
    /// One pushed record on a SUB stream.
    Record {
        record: TopicRecord,
    },
    Error {
        message: String,
    },
}

pub fn send<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    let text = to_canonical(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    write_frame(w, text.as_bytes())
}

pub fn recv<R: Read>(r: &mut R) -> io::Result<Option<Message>> {
    match read_frame(r)? {
        None => Ok(None),
        Some(bytes) => {
            let text = std::str::from_utf8(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            from_canonical(text).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn frames_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"hello").unwrap();
        write_frame(&mut buf, b"").unwrap();
        assert_eq!(&buf[..4], &[0, 0, 0, 5]);
        let mut r = Cursor::new(buf);
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"hello");
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"");
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn truncated_frame_is_an_error() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"hello").unwrap();
        buf.truncate(6);
        assert!(read_frame(&mut Cursor::new(buf)).is_err());
    }

    #[test]
    fn message_tags() {
        let mut buf = Vec::new();
        send(&mut buf, &Message::Shutdown).unwrap();
        assert_eq!(&buf[4..], br#"{"type":"SHUTDOWN"}"#);
        send(&mut buf, &Message::TaskAck { task_id: "e:1:1".into() }).unwrap();
        let mut r = Cursor::new(buf);
        assert_eq!(recv(&mut r).unwrap(), Some(Message::Shutdown));
        assert_eq!(recv(&mut r).unwrap(), Some(Message::TaskAck { task_id: "e:1:1".into() }));
        assert_eq!(recv(&mut r).unwrap(), None);
    }
}
