//! Non-canonical SMILES output, used to label derived graphs such as scaffolds.

use super::{Atom, BondOrder, Chirality, MolGraph};

pub fn write_smiles(mol: &MolGraph) -> String {
    let n = mol.atoms.len();
    let adj = mol.adjacency();
    let mut visited = vec![false; n];
    let mut parent = vec![usize::MAX; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut roots = Vec::new();
    for root in 0..n {
        if visited[root] {
            continue;
        }
        roots.push(root);
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            if visited[v] {
                continue;
            }
            visited[v] = true;
            if parent[v] != usize::MAX {
                children[parent[v]].push(v);
            }
            let mut nbrs: Vec<usize> = adj[v].iter().map(|&(w, _)| w).collect();
            nbrs.sort_unstable_by(|a, b| b.cmp(a));
            for w in nbrs {
                if !visited[w] {
                    parent[w] = v;
                    stack.push(w);
                }
            }
        }
    }
    // parent pointers can be overwritten before a vertex is popped, so the
    // tree is taken from the recorded children
    let mut tree_edge = std::collections::HashSet::new();
    for (v, cs) in children.iter().enumerate() {
        for &c in cs {
            tree_edge.insert((v.min(c), v.max(c)));
        }
    }
    let closures: Vec<(usize, usize, BondOrder)> = mol
        .bonds
        .iter()
        .filter(|b| !tree_edge.contains(&(b.a, b.b)))
        .map(|b| (b.a, b.b, b.order))
        .collect();

    let order_of = |a: usize, b: usize| {
        adj[a].iter().find(|&&(w, _)| w == b).map(|&(_, o)| o).unwrap_or(BondOrder::Single)
    };
    let mut out = String::new();
    let mut written = vec![false; n];
    let mut labels: Vec<Option<(usize, usize)>> = Vec::new();
    for (k, &root) in roots.iter().enumerate() {
        if k > 0 {
            out.push('.');
        }
        let mut ctx = Writer {
            mol,
            children: &children,
            closures: &closures,
            written: &mut written,
            labels: &mut labels,
            out: &mut out,
            order_of: &order_of,
        };
        ctx.emit(root);
    }
    out
}

struct Writer<'a, F: Fn(usize, usize) -> BondOrder> {
    mol: &'a MolGraph,
    children: &'a [Vec<usize>],
    closures: &'a [(usize, usize, BondOrder)],
    written: &'a mut Vec<bool>,
    labels: &'a mut Vec<Option<(usize, usize)>>,
    out: &'a mut String,
    order_of: &'a F,
}

impl<F: Fn(usize, usize) -> BondOrder> Writer<'_, F> {
    fn emit(&mut self, v: usize) {
        self.out.push_str(&atom_token(&self.mol.atoms[v]));
        self.written[v] = true;
        for &(a, b, order) in self.closures {
            if a != v && b != v {
                continue;
            }
            let other = if a == v { b } else { a };
            if self.written[other] {
                let slot = self
                    .labels
                    .iter()
                    .position(|l| *l == Some((other.min(v), other.max(v))))
                    .expect("ring label opened");
                self.labels[slot] = None;
                self.out.push_str(bond_token(self.mol, v, other, order));
                push_label(self.out, slot + 1);
            } else {
                let slot = match self.labels.iter().position(Option::is_none) {
                    Some(s) => s,
                    None => {
                        self.labels.push(None);
                        self.labels.len() - 1
                    }
                };
                self.labels[slot] = Some((other.min(v), other.max(v)));
                push_label(self.out, slot + 1);
            }
        }
        let kids = &self.children[v];
        for (i, &c) in kids.iter().enumerate() {
            let branch = i + 1 < kids.len();
            if branch {
                self.out.push('(');
            }
            let order = (self.order_of)(v, c);
            self.out.push_str(bond_token(self.mol, v, c, order));
            self.emit(c);
            if branch {
                self.out.push(')');
            }
        }
    }
}

fn push_label(out: &mut String, label: usize) {
    if label < 10 {
        out.push_str(&label.to_string());
    } else {
        out.push_str(&format!("%{label:02}"));
    }
}

fn bond_token(mol: &MolGraph, a: usize, b: usize, order: BondOrder) -> &'static str {
    match order {
        BondOrder::Single if mol.atoms[a].aromatic && mol.atoms[b].aromatic => "-",
        BondOrder::Single | BondOrder::Aromatic => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

fn atom_token(atom: &Atom) -> String {
    let organic = matches!(atom.element, 0 | 5 | 6 | 7 | 8 | 9 | 15 | 16 | 17 | 35 | 53);
    let plain = atom.explicit_h.is_none()
        && atom.formal_charge == 0
        && atom.isotope.is_none()
        && atom.chirality == Chirality::None;
    let mut sym = atom.symbol().to_string();
    if atom.aromatic {
        sym = sym.to_lowercase();
    }
    if organic && plain {
        return sym;
    }
    let mut s = String::from("[");
    if let Some(iso) = atom.isotope {
        s.push_str(&iso.to_string());
    }
    s.push_str(&sym);
    match atom.chirality {
        Chirality::Clockwise => s.push_str("@@"),
        Chirality::CounterClockwise | Chirality::Other => s.push('@'),
        Chirality::None => {}
    }
    let h = atom.explicit_h.unwrap_or(atom.implicit_h);
    match h {
        0 => {}
        1 => s.push('H'),
        h => s.push_str(&format!("H{h}")),
    }
    match atom.formal_charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}
