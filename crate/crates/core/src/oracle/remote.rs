//! Line-delimited JSON protocol that lets an out-of-process backend stand in
//! for [`SimulatedOracle`](super::SimulatedOracle).
//!
//! ```text
//! -> {"op":"query","node":12}
//! <- {"label":1,"features":[0.5,-1.25],"cost":1}
//! -> {"op":"remaining"}
//! <- {"remaining":287}
//! ```
//!
//! Failures are answered with `{"error":"<kind>","message":"..."}`, where
//! kind is `budget_exhausted`, `domain` or `bad_request`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Oracle, OracleResponse};
use crate::error::{Error, Result};
use crate::graph::{NodeId, NodeSet};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Query { node: u32 },
    Remaining,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainingReply {
    pub remaining: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: String,
    pub message: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Reply {
    Error(ErrorReply),
    Remaining(RemainingReply),
    Query(OracleResponse),
}

fn error_reply(err: &Error) -> ErrorReply {
    let kind = match err {
        Error::BudgetExhausted { .. } => "budget_exhausted",
        Error::Domain(_) => "domain",
        _ => "bad_request",
    };
    ErrorReply {
        error: kind.to_string(),
        message: err.to_string(),
    }
}

/// Answer protocol requests from `input` against `oracle` until EOF.
pub fn serve<O: Oracle + ?Sized, R: BufRead, W: Write>(
    oracle: &mut O,
    input: R,
    mut output: W,
) -> Result<()> {
    let io_err = |e| Error::io("<oracle stream>", e);
    for line in input.lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Ok(Request::Query { node }) => match oracle.query(NodeId(node)) {
                Ok(resp) => serde_json::to_string(&resp)?,
                Err(e) => serde_json::to_string(&error_reply(&e))?,
            },
            Ok(Request::Remaining) => serde_json::to_string(&RemainingReply {
                remaining: oracle.remaining(),
            })?,
            Err(e) => serde_json::to_string(&ErrorReply {
                error: "bad_request".into(),
                message: e.to_string(),
            })?,
        };
        writeln!(output, "{reply}").map_err(io_err)?;
        output.flush().map_err(io_err)?;
    }
    Ok(())
}

/// Client side of the protocol. Keeps its own cost ledger from the costs the
/// backend reports.
pub struct RemoteOracle<R, W> {
    reader: R,
    writer: W,
    limit: u64,
    spent: u64,
    per_node_cost: u64,
    cache: NodeSet,
}

impl<R: BufRead, W: Write> RemoteOracle<R, W> {
    /// Connects and asks the backend for its budget. `per_node_cost` is the
    /// price the caller plans with; the backend's reported costs are what
    /// the ledger records.
    pub fn connect(reader: R, writer: W, node_count: usize, per_node_cost: u64) -> Result<Self> {
        let mut this = Self {
            reader,
            writer,
            limit: 0,
            spent: 0,
            per_node_cost,
            cache: NodeSet::new(node_count),
        };
        this.limit = this.ask_remaining()?;
        Ok(this)
    }

    fn round_trip(&mut self, req: &Request) -> Result<Reply> {
        let io_err = |e| Error::io("<oracle stream>", e);
        let line = serde_json::to_string(req)?;
        writeln!(self.writer, "{line}").map_err(io_err)?;
        self.writer.flush().map_err(io_err)?;
        let mut buf = String::new();
        if self.reader.read_line(&mut buf).map_err(io_err)? == 0 {
            return Err(Error::Protocol("backend closed the stream".into()));
        }
        serde_json::from_str(&buf)
            .map_err(|e| Error::Protocol(format!("unparseable reply {:?}: {e}", buf.trim_end())))
    }

    fn ask_remaining(&mut self) -> Result<u64> {
        match self.round_trip(&Request::Remaining)? {
            Reply::Remaining(r) => Ok(r.remaining),
            Reply::Error(e) => Err(Error::Protocol(e.message)),
            Reply::Query(_) => Err(Error::Protocol("expected a remaining reply".into())),
        }
    }
}

impl<R: BufRead, W: Write> Oracle for RemoteOracle<R, W> {
    fn query(&mut self, v: NodeId) -> Result<OracleResponse> {
        match self.round_trip(&Request::Query { node: v.0 })? {
            Reply::Query(resp) => {
                self.spent += resp.cost;
                if resp.cost > 0 {
                    self.cache.insert(v);
                }
                Ok(resp)
            }
            Reply::Error(e) if e.error == "budget_exhausted" => Err(Error::BudgetExhausted {
                spent: self.spent,
                limit: self.limit,
            }),
            Reply::Error(e) if e.error == "domain" => Err(Error::Domain(e.message)),
            Reply::Error(e) => Err(Error::Protocol(e.message)),
            Reply::Remaining(_) => Err(Error::Protocol("expected a query reply".into())),
        }
    }

    fn remaining(&self) -> u64 {
        self.limit.saturating_sub(self.spent)
    }

    fn spent(&self) -> u64 {
        self.spent
    }

    fn limit(&self) -> u64 {
        self.limit
    }

    fn per_node_cost(&self) -> u64 {
        self.per_node_cost
    }

    fn is_cached(&self, v: NodeId) -> bool {
        self.cache.contains(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_format() {
        assert_eq!(
            serde_json::to_string(&Request::Query { node: 7 }).unwrap(),
            r#"{"op":"query","node":7}"#
        );
        assert_eq!(
            serde_json::to_string(&Request::Remaining).unwrap(),
            r#"{"op":"remaining"}"#
        );
    }

    #[test]
    fn response_wire_format() {
        let r = OracleResponse {
            label: true,
            features: vec![0.5, -1.0],
            cost: 1,
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"label":1,"features":[0.5,-1.0],"cost":1}"#
        );
        assert!(serde_json::from_str::<OracleResponse>(r#"{"label":2,"features":[],"cost":0}"#).is_err());
    }
}
