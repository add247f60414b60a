//! Evolutionary grouping tree: storage, node layout, push and templates.

mod node;
mod rle;
mod store;
mod template;

pub use node::{ChildSet, RootNode, StaticNode, Tally};
pub use rle::{RleColumn, Run};
pub(crate) use store::Dropped;
pub use store::RowStore;
pub use template::{
    extract_templates, render_parts, EventId, ParsedTemplate, TemplateIndex, TemplateMatch, TemplatePart, WILDCARD,
};
