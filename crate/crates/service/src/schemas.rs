//! Published JSON schemas of every /v1 response body.

use schemars::{schema_for, JsonSchema};
use serde_json::Value;
use vibe_core::stats::ComparisonReport;

use crate::error::ErrorBody;
use crate::jobs::JobStatus;
use crate::model::*;
use crate::session::{Session, Settings};

pub const NAMES: [&str; 14] = [
    "health",
    "overview",
    "cluster_list",
    "job",
    "subgroup_list",
    "subgroup_detail",
    "subgroup_brief",
    "search",
    "comparison",
    "history",
    "settings",
    "session",
    "schema_index",
    "error",
];

fn to_value<T: JsonSchema>() -> Value {
    serde_json::to_value(schema_for!(T)).expect("schemas serialize")
}

pub fn schema(name: &str) -> Option<Value> {
    Some(match name {
        "health" => to_value::<Health>(),
        "overview" => to_value::<Overview>(),
        "cluster_list" => to_value::<ClusterList>(),
        "job" => to_value::<JobStatus>(),
        "subgroup_list" => to_value::<SubgroupList>(),
        "subgroup_detail" => to_value::<SubgroupDetail>(),
        "subgroup_brief" => to_value::<SubgroupBrief>(),
        "search" => to_value::<SearchResponse>(),
        "comparison" => to_value::<ComparisonReport>(),
        "history" => to_value::<History>(),
        "settings" => to_value::<Settings>(),
        "session" => to_value::<Session>(),
        "schema_index" => to_value::<SchemaIndex>(),
        "error" => to_value::<ErrorBody>(),
        _ => return None,
    })
}

pub fn index() -> SchemaIndex {
    SchemaIndex {
        names: NAMES.iter().map(|s| s.to_string()).collect(),
    }
}
