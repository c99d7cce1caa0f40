//! UI-state representation shared by the simulator, the policy layer and
//! the replay engine: node trees, their breadth-first flattening, and the
//! compact state descriptors stored in compiled skills.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Widget class that marks the root of a modal overlay (system dialogs,
/// choosers, welcome flows).
pub const DIALOG_CLASS: &str = "android.app.Dialog";

/// Maximum number of resource ids retained in a [`UIStateDescriptor`].
pub const KEY_ELEMENT_CAP: usize = 5;

/// Width of the visible-node count buckets in a [`UIStateDescriptor`].
pub const COUNT_BUCKET_WIDTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct Rect {
    pub left: i32,
    pub top: i32,
    pub right: i32,
    pub bottom: i32,
}

impl Rect {
    pub const fn new(left: i32, top: i32, right: i32, bottom: i32) -> Self {
        Self { left, top, right, bottom }
    }

    pub fn is_degenerate(&self) -> bool {
        self.left >= self.right || self.top >= self.bottom
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct UINode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_desc: Option<String>,
    pub class_name: String,
    pub bounds: Rect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_class: Option<String>,
    #[serde(default)]
    pub sibling_index: usize,
    #[serde(default)]
    pub children: Vec<UINode>,
    #[serde(default)]
    pub clickable: bool,
    #[serde(default)]
    pub node_id: usize,
}

impl UINode {
    pub fn new(class_name: impl Into<String>, bounds: Rect) -> Self {
        Self { class_name: class_name.into(), bounds, ..Default::default() }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.resource_id = Some(id.into());
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn with_desc(mut self, desc: impl Into<String>) -> Self {
        self.content_desc = Some(desc.into());
        self
    }

    pub fn clickable(mut self) -> Self {
        self.clickable = true;
        self
    }

    pub fn with_children(mut self, children: Vec<UINode>) -> Self {
        self.children = children;
        self
    }

    pub fn is_dialog(&self) -> bool {
        self.class_name == DIALOG_CLASS
    }

    /// Total number of nodes in this subtree, counted recursively.
    pub fn subtree_len(&self) -> usize {
        1 + self.children.iter().map(UINode::subtree_len).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UITree {
    pub root: UINode,
    pub activity: String,
    pub foreground_app: String,
}

impl UITree {
    /// Builds a tree and fills in the derived per-node metadata.
    pub fn new(root: UINode, activity: impl Into<String>, foreground_app: impl Into<String>) -> Self {
        let mut tree = Self { root, activity: activity.into(), foreground_app: foreground_app.into() };
        tree.normalize();
        tree
    }

    /// Recomputes `sibling_index`, `parent_class` and `node_id` (BFS order)
    /// for every node.
    pub fn normalize(&mut self) {
        fn fix_structure(node: &mut UINode) {
            let class = node.class_name.clone();
            for (i, child) in node.children.iter_mut().enumerate() {
                child.sibling_index = i;
                child.parent_class = Some(class.clone());
                fix_structure(child);
            }
        }
        self.root.sibling_index = 0;
        self.root.parent_class = None;
        fix_structure(&mut self.root);

        let mut queue: VecDeque<&mut UINode> = VecDeque::new();
        queue.push_back(&mut self.root);
        let mut next = 0;
        while let Some(node) = queue.pop_front() {
            node.node_id = next;
            next += 1;
            queue.extend(node.children.iter_mut());
        }
    }

    pub fn flatten(&self) -> Vec<&UINode> {
        flatten_tree(self)
    }

    /// Roots of every modal overlay present in the tree, in BFS order.
    pub fn dialogs(&self) -> Vec<&UINode> {
        self.flatten().into_iter().filter(|n| n.is_dialog()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tree serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Breadth-first traversal of the tree. The position of a node in the
/// returned list is the element index policies refer to.
pub fn flatten_tree(tree: &UITree) -> Vec<&UINode> {
    let mut out = Vec::with_capacity(tree.root.subtree_len());
    let mut queue = VecDeque::from([&tree.root]);
    while let Some(node) = queue.pop_front() {
        out.push(node);
        queue.extend(node.children.iter());
    }
    out
}

/// Pixel coordinate of a node's centre, truncating toward zero.
pub fn node_center(node: &UINode) -> Result<(i32, i32)> {
    let b = node.bounds;
    if b.is_degenerate() {
        return Err(Error::DegenerateBounds);
    }
    Ok(((b.left + b.right) / 2, (b.top + b.bottom) / 2))
}

/// Fingerprint of the UI context a skill step expects to run in.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct UIStateDescriptor {
    pub activity: String,
    pub key_element_ids: Vec<String>,
    pub element_count_bucket: usize,
}

impl UIStateDescriptor {
    /// Number of this descriptor's key elements visible in `tree`.
    pub fn present_in(&self, tree: &UITree) -> usize {
        let nodes = tree.flatten();
        self.key_element_ids
            .iter()
            .filter(|id| nodes.iter().any(|n| n.resource_id.as_deref() == Some(id.as_str())))
            .count()
    }

    /// True when `tree` shows the same screen with at least half of the key
    /// elements present.
    pub fn satisfied_by(&self, tree: &UITree) -> bool {
        tree.activity == self.activity && self.present_in(tree) * 2 >= self.key_element_ids.len()
    }
}

pub fn make_descriptor(tree: &UITree) -> UIStateDescriptor {
    let nodes = tree.flatten();
    let mut key_element_ids: Vec<String> = Vec::with_capacity(KEY_ELEMENT_CAP);
    for id in nodes.iter().filter_map(|n| n.resource_id.as_deref()) {
        if key_element_ids.len() == KEY_ELEMENT_CAP {
            break;
        }
        if !id.is_empty() && !key_element_ids.iter().any(|k| k == id) {
            key_element_ids.push(id.to_string());
        }
    }
    UIStateDescriptor {
        activity: tree.activity.clone(),
        key_element_ids,
        element_count_bucket: nodes.len() / COUNT_BUCKET_WIDTH,
    }
}
