//! Symbolic scenes: a grid of patches holding objects, background landmarks,
//! spatial relations and at most one event.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub object: String,
    pub attribute: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<Entity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
}

/// `subject` stands `relation` the `landmark` found in the subject's cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub subject: String,
    pub relation: String,
    pub landmark: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub actor: String,
    pub action: String,
}

/// One ground-truth statement about a scene.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Fact {
    Exists(String),
    Attribute {
        object: String,
        attribute: String,
    },
    Relation {
        subject: String,
        relation: String,
        landmark: String,
    },
    Event {
        actor: String,
        action: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGrid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Cell>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<Event>,
}

impl SceneGrid {
    pub fn empty(rows: usize, cols: usize) -> Self {
        SceneGrid {
            rows,
            cols,
            cells: vec![Cell::default(); rows * cols],
            relations: Vec::new(),
            event: None,
        }
    }

    pub fn num_patches(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.cells.len() != self.rows * self.cols {
            return Err(invalid_input(format!(
                "scene has {} cells for a {}x{} grid",
                self.cells.len(),
                self.rows,
                self.cols
            )));
        }
        for rel in &self.relations {
            let (cell, _) = self
                .find_object(&rel.subject)
                .ok_or_else(|| invalid_input(format!("relation subject {:?} is not in the scene", rel.subject)))?;
            if self.cells[cell].background.as_deref() != Some(rel.landmark.as_str()) {
                return Err(invalid_input(format!(
                    "relation landmark {:?} is not in the cell of {:?}",
                    rel.landmark, rel.subject
                )));
            }
        }
        if let Some(ev) = &self.event {
            if self.find_object(&ev.actor).is_none() {
                return Err(invalid_input(format!("event actor {:?} is not in the scene", ev.actor)));
            }
        }
        Ok(())
    }

    pub fn entities(&self) -> impl Iterator<Item = (usize, &Entity)> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.entity.as_ref().map(|e| (i, e)))
    }

    pub fn find_object(&self, object: &str) -> Option<(usize, &Entity)> {
        self.entities().find(|(_, e)| e.object == object)
    }

    pub fn object_with_attribute(&self, attribute: &str) -> Option<(usize, &Entity)> {
        self.entities().find(|(_, e)| e.attribute == attribute)
    }

    pub fn relation_of(&self, subject: &str) -> Option<&Relation> {
        self.relations.iter().find(|r| r.subject == subject)
    }

    pub fn event_of(&self, actor: &str) -> Option<&str> {
        self.event
            .as_ref()
            .filter(|e| e.actor == actor)
            .map(|e| e.action.as_str())
    }

    /// Object and landmark names present anywhere in the grid.
    pub fn entity_names(&self) -> BTreeSet<&str> {
        let mut names = BTreeSet::new();
        for cell in &self.cells {
            if let Some(e) = &cell.entity {
                names.insert(e.object.as_str());
            }
            if let Some(b) = &cell.background {
                names.insert(b.as_str());
            }
        }
        names
    }

    /// Visual content of each patch as tokens.
    pub fn patch_tokens(&self, patch: usize) -> Vec<&str> {
        let cell = &self.cells[patch];
        let mut toks = Vec::with_capacity(5);
        if let Some(e) = &cell.entity {
            toks.push(e.object.as_str());
            toks.push(e.attribute.as_str());
            if let Some(rel) = self.relation_of(&e.object) {
                toks.push(rel.relation.as_str());
            }
            if let Some(action) = self.event_of(&e.object) {
                toks.push(action);
            }
        }
        if let Some(b) = &cell.background {
            toks.push(b.as_str());
        }
        toks
    }

    pub fn facts(&self) -> Vec<Fact> {
        let mut facts = Vec::new();
        for cell in &self.cells {
            if let Some(e) = &cell.entity {
                facts.push(Fact::Exists(e.object.clone()));
                facts.push(Fact::Attribute {
                    object: e.object.clone(),
                    attribute: e.attribute.clone(),
                });
            }
            if let Some(b) = &cell.background {
                facts.push(Fact::Exists(b.clone()));
            }
        }
        for r in &self.relations {
            facts.push(Fact::Relation {
                subject: r.subject.clone(),
                relation: r.relation.clone(),
                landmark: r.landmark.clone(),
            });
        }
        if let Some(ev) = &self.event {
            facts.push(Fact::Event {
                actor: ev.actor.clone(),
                action: ev.action.clone(),
            });
        }
        facts
    }

    pub fn holds(&self, fact: &Fact) -> bool {
        match fact {
            Fact::Exists(name) => self.entity_names().contains(name.as_str()),
            Fact::Attribute { object, attribute } => {
                self.find_object(object).is_some_and(|(_, e)| &e.attribute == attribute)
            }
            Fact::Relation {
                subject,
                relation,
                landmark,
            } => self
                .relations
                .iter()
                .any(|r| &r.subject == subject && &r.relation == relation && &r.landmark == landmark),
            Fact::Event { actor, action } => self.event_of(actor) == Some(action.as_str()),
        }
    }

    /// Canonical text rendering of the fact set, one clause per fact group.
    pub fn render_facts(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |words: &[&str]| out.extend(words.iter().map(|w| w.to_string()));
        for cell in &self.cells {
            if let Some(e) = &cell.entity {
                push(&["there", "is", "a", &e.attribute, &e.object, "."]);
                if let Some(r) = self.relation_of(&e.object) {
                    push(&["the", &e.object, "is", &r.relation, "the", &r.landmark, "."]);
                }
                if let Some(action) = self.event_of(&e.object) {
                    push(&["the", &e.object, "is", action, "."]);
                }
            } else if let Some(b) = &cell.background {
                push(&["there", "is", "a", b, "."]);
            }
        }
        out
    }

    /// Every token used by the scene, for vocabulary checks.
    pub fn tokens(&self) -> Vec<&str> {
        (0..self.num_patches()).flat_map(|p| self.patch_tokens(p)).collect()
    }
}
