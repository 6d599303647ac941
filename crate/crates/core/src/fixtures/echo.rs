//! Client sends a ping on its `send` timeout; server echoes it back as pong.

use serde_json::json;

use super::{Fixture, Scenario, ScenarioStep};
use crate::explore::InvariantPredicate;
use crate::model::NodeId;
use crate::shim::{Handler, HandlerContext, HandlerError, NodeDefinition};
use crate::value::Value;

struct Client;
struct Server;

fn counter(ctx: &HandlerContext<'_>, key: &str) -> i64 {
    ctx.state()[key].as_i64().unwrap_or(0)
}

impl Handler for Client {
    fn on_start(&self, ctx: &mut HandlerContext<'_>) -> Result<(), HandlerError> {
        ctx.set_state(json!({"pongs": 0}));
        ctx.set_timeout("send", json!({}));
        Ok(())
    }

    fn on_message(&self, ctx: &mut HandlerContext<'_>, _: &NodeId, kind: &str, _: &Value) -> Result<(), HandlerError> {
        if kind == "pong" {
            let pongs = counter(ctx, "pongs");
            ctx.state_mut()["pongs"] = json!(pongs + 1);
        }
        Ok(())
    }

    fn on_timeout(&self, ctx: &mut HandlerContext<'_>, kind: &str, _: &Value) -> Result<(), HandlerError> {
        if kind == "send" {
            let n = counter(ctx, "pongs") + 1;
            ctx.send("server", "ping", json!({"n": n}));
        }
        Ok(())
    }
}

impl Handler for Server {
    fn on_start(&self, ctx: &mut HandlerContext<'_>) -> Result<(), HandlerError> {
        ctx.set_state(json!({"pings": 0}));
        Ok(())
    }

    fn on_message(&self, ctx: &mut HandlerContext<'_>, from: &NodeId, kind: &str, body: &Value) -> Result<(), HandlerError> {
        if kind == "ping" {
            let pings = counter(ctx, "pings");
            ctx.state_mut()["pings"] = json!(pings + 1);
            ctx.send(from.clone(), "pong", body.clone());
        }
        Ok(())
    }

    fn on_timeout(&self, _: &mut HandlerContext<'_>, _: &str, _: &Value) -> Result<(), HandlerError> {
        Ok(())
    }
}

/// The minimal two-node system: `client` and `server`.
pub fn fixture_echo() -> Fixture {
    let pongs_bounded = InvariantPredicate::new("pongs <= pings", |s| {
        let pongs = s.state("client").and_then(|v| v["pongs"].as_i64()).unwrap_or(0);
        let pings = s.state("server").and_then(|v| v["pings"].as_i64()).unwrap_or(0);
        pongs <= pings
    });
    Fixture::new(
        "echo",
        || vec![NodeDefinition::new("client", Client), NodeDefinition::new("server", Server)],
        vec![pongs_bounded],
        vec![
            Scenario {
                name: "round-trip",
                steps: vec![
                    ScenarioStep::timeout("client", "send"),
                    ScenarioStep::message("server", "client", "ping"),
                    ScenarioStep::message("client", "server", "pong"),
                ],
            },
            Scenario {
                name: "duplicate-ping",
                steps: vec![
                    ScenarioStep::timeout("client", "send"),
                    ScenarioStep::duplicate("server", "client", "ping"),
                    ScenarioStep::message("server", "client", "ping"),
                    ScenarioStep::message("server", "client", "ping"),
                ],
            },
            Scenario {
                name: "drop-ping",
                steps: vec![
                    ScenarioStep::timeout("client", "send"),
                    ScenarioStep::drop("server", "client", "ping"),
                ],
            },
        ],
    )
}
