//! 2D coordinates and SVG/PNG rendering for prompt images.
//!
//! Isolated rings become regular polygons, fused ring systems are relaxed by
//! stress minimization from a circular start, and acyclic chains zigzag at
//! 120°. Disconnected fragments are laid out left to right.

use std::f64::consts::PI;
use std::fmt::Write as _;

use super::{rings, BondOrder, MolGraph};

const RELAX_ITERATIONS: usize = 400;

#[derive(Clone, Debug, PartialEq)]
pub struct DepictOptions {
    /// Bond length in SVG user units.
    pub bond_length: f64,
    pub margin: f64,
    pub font_size: f64,
    pub stroke_width: f64,
    /// Gap between the lines of a double or triple bond.
    pub line_gap: f64,
}

impl Default for DepictOptions {
    fn default() -> Self {
        DepictOptions {
            bond_length: 30.0,
            margin: 20.0,
            font_size: 13.0,
            stroke_width: 1.5,
            line_gap: 4.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("svg: {0}")]
    Svg(String),
    #[error("png encoding: {0}")]
    Png(String),
    #[error("image too large: {0}x{1}")]
    Size(u32, u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorImage {
    pub svg: String,
    pub width: f64,
    pub height: f64,
    /// Atom coordinates in SVG user units, one per atom.
    pub coords: Vec<[f64; 2]>,
}

impl VectorImage {
    /// Rasterizes at `scale` device pixels per user unit. Labels need a system
    /// font; without one the bonds still render.
    pub fn to_png(&self, scale: f32) -> Result<Vec<u8>, RasterError> {
        let mut opts = resvg::usvg::Options::default();
        opts.fontdb_mut().load_system_fonts();
        let tree = resvg::usvg::Tree::from_str(&self.svg, &opts).map_err(|e| RasterError::Svg(e.to_string()))?;
        let w = (self.width as f32 * scale).ceil().max(1.0) as u32;
        let h = (self.height as f32 * scale).ceil().max(1.0) as u32;
        let mut pixmap = resvg::tiny_skia::Pixmap::new(w, h).ok_or(RasterError::Size(w, h))?;
        pixmap.fill(resvg::tiny_skia::Color::WHITE);
        resvg::render(&tree, resvg::tiny_skia::Transform::from_scale(scale, scale), &mut pixmap.as_mut());
        pixmap.encode_png().map_err(|e| RasterError::Png(e.to_string()))
    }
}

type P = [f64; 2];

fn add(a: P, b: P) -> P {
    [a[0] + b[0], a[1] + b[1]]
}
fn sub(a: P, b: P) -> P {
    [a[0] - b[0], a[1] - b[1]]
}
fn scale(a: P, s: f64) -> P {
    [a[0] * s, a[1] * s]
}
fn norm(a: P) -> f64 {
    a[0].hypot(a[1])
}
fn unit(a: P) -> P {
    let n = norm(a);
    if n < 1e-12 {
        [1.0, 0.0]
    } else {
        scale(a, 1.0 / n)
    }
}
fn rotate(a: P, angle: f64) -> P {
    let (s, c) = angle.sin_cos();
    [a[0] * c - a[1] * s, a[0] * s + a[1] * c]
}
fn angle_of(a: P) -> f64 {
    a[1].atan2(a[0])
}
fn centroid(points: &[P]) -> P {
    let mut c = [0.0, 0.0];
    for p in points {
        c = add(c, *p);
    }
    scale(c, 1.0 / points.len().max(1) as f64)
}

/// Unit-bond-length coordinates for every atom.
pub fn layout(mol: &MolGraph) -> Vec<P> {
    let n = mol.n_atoms();
    let adj: Vec<Vec<usize>> = mol.adjacency().into_iter().map(|v| v.into_iter().map(|(w, _)| w).collect()).collect();
    let systems = rings::ring_systems(mol);
    let mut system_of = vec![usize::MAX; n];
    for (s, atoms) in systems.iter().enumerate() {
        for &a in atoms {
            system_of[a] = s;
        }
    }
    let ring = rings::ring_bonds(mol);
    let local: Vec<Vec<P>> = systems
        .iter()
        .map(|atoms| system_coords(mol, atoms, &ring))
        .collect();

    let mut pos: Vec<Option<P>> = vec![None; n];
    let mut turn = vec![1.0f64; n];
    let mut fragments: Vec<Vec<usize>> = Vec::new();
    for root in 0..n {
        if pos[root].is_some() {
            continue;
        }
        let mut members = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        if system_of[root] != usize::MAX {
            let s = system_of[root];
            for (k, &a) in systems[s].iter().enumerate() {
                pos[a] = Some(local[s][k]);
                queue.push_back(a);
            }
        } else {
            pos[root] = Some([0.0, 0.0]);
            queue.push_back(root);
        }
        while let Some(v) = queue.pop_front() {
            members.push(v);
            let pv = pos[v].unwrap();
            let children: Vec<usize> = adj[v].iter().copied().filter(|&w| pos[w].is_none()).collect();
            if children.is_empty() {
                continue;
            }
            let placed: Vec<P> = adj[v].iter().filter_map(|&w| pos[w]).collect();
            let dirs = substituent_directions(pv, &placed, children.len(), turn[v], system_of[v], &systems, &pos);
            for (&w, dir) in children.iter().zip(dirs) {
                let anchor = add(pv, dir);
                if system_of[w] != usize::MAX {
                    let s = system_of[w];
                    let atoms = &systems[s];
                    let k = atoms.iter().position(|&a| a == w).unwrap();
                    let c = centroid(&local[s]);
                    let spoke = sub(local[s][k], c);
                    let rot = if norm(spoke) < 1e-9 { 0.0 } else { angle_of(scale(dir, -1.0)) - angle_of(spoke) };
                    for (j, &a) in atoms.iter().enumerate() {
                        let p = add(anchor, rotate(sub(local[s][j], local[s][k]), rot));
                        pos[a] = Some(p);
                        queue.push_back(a);
                    }
                } else {
                    pos[w] = Some(anchor);
                    turn[w] = -turn[v];
                    queue.push_back(w);
                }
            }
        }
        members.sort_unstable();
        members.dedup();
        fragments.push(members);
    }

    let mut coords: Vec<P> = pos.into_iter().map(|p| p.unwrap_or([0.0, 0.0])).collect();
    let mut cursor = 0.0;
    for members in &fragments {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for &a in members {
            for d in 0..2 {
                lo[d] = lo[d].min(coords[a][d]);
                hi[d] = hi[d].max(coords[a][d]);
            }
        }
        let shift = [cursor - lo[0], -(lo[1] + hi[1]) / 2.0];
        for &a in members {
            coords[a] = add(coords[a], shift);
        }
        cursor += hi[0] - lo[0] + 1.5;
    }
    coords
}

fn substituent_directions(
    pv: P,
    placed: &[P],
    k: usize,
    turn: f64,
    system: usize,
    systems: &[Vec<usize>],
    pos: &[Option<P>],
) -> Vec<P> {
    let spread = |base: f64, step: f64| -> Vec<P> {
        (0..k)
            .map(|i| {
                let offset = (i as f64 - (k as f64 - 1.0) / 2.0) * step;
                rotate([1.0, 0.0], base + offset)
            })
            .collect()
    };
    if system != usize::MAX {
        let ring_points: Vec<P> = systems[system].iter().filter_map(|&a| pos[a]).collect();
        let out = sub(pv, centroid(&ring_points));
        return spread(angle_of(unit(out)), PI / 3.0);
    }
    match placed.len() {
        0 => (0..k).map(|i| rotate([1.0, 0.0], -PI / 6.0 + 2.0 * PI * i as f64 / k as f64)).collect(),
        1 => {
            let incoming = angle_of(sub(pv, placed[0]));
            match k {
                1 => vec![rotate([1.0, 0.0], incoming + turn * PI / 3.0)],
                2 => vec![rotate([1.0, 0.0], incoming + PI / 3.0), rotate([1.0, 0.0], incoming - PI / 3.0)],
                _ => spread(incoming, PI / k as f64),
            }
        }
        _ => {
            let mut back = [0.0, 0.0];
            for p in placed {
                back = add(back, unit(sub(*p, pv)));
            }
            spread(angle_of(scale(back, -1.0)), PI / (k as f64 + 1.0))
        }
    }
}

/// Local coordinates for one ring system, in the order of `atoms`.
fn system_coords(mol: &MolGraph, atoms: &[usize], ring: &[bool]) -> Vec<P> {
    let m = atoms.len();
    let index = |a: usize| atoms.iter().position(|&x| x == a);
    let mut adj = vec![Vec::new(); m];
    for (b, &r) in mol.bonds.iter().zip(ring) {
        if !r {
            continue;
        }
        if let (Some(i), Some(j)) = (index(b.a), index(b.b)) {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let n_edges: usize = adj.iter().map(Vec::len).sum::<usize>() / 2;
    let order = cycle_order(&adj);
    let radius = 0.5 / (PI / m as f64).sin();
    let mut coords = vec![[0.0, 0.0]; m];
    for (k, &i) in order.iter().enumerate() {
        let theta = PI / 2.0 + 2.0 * PI * k as f64 / m as f64;
        coords[i] = [radius * theta.cos(), radius * theta.sin()];
    }
    if n_edges == m {
        return coords;
    }
    relax(&adj, coords)
}

/// Walk order around a simple cycle; a DFS order when the system is fused.
fn cycle_order(adj: &[Vec<usize>]) -> Vec<usize> {
    let m = adj.len();
    let mut seen = vec![false; m];
    let mut order = Vec::with_capacity(m);
    let mut stack = vec![0];
    while let Some(v) = stack.pop() {
        if seen[v] {
            continue;
        }
        seen[v] = true;
        order.push(v);
        let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !seen[w]).collect();
        next.sort_unstable_by(|a, b| b.cmp(a));
        stack.extend(next);
    }
    order
}

/// Stress majorization toward ideal distances derived from graph distance.
fn relax(adj: &[Vec<usize>], mut coords: Vec<P>) -> Vec<P> {
    let m = adj.len();
    let mut dist = vec![vec![usize::MAX; m]; m];
    for s in 0..m {
        dist[s][s] = 0;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if dist[s][w] == usize::MAX {
                    dist[s][w] = dist[s][v] + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    let ideal = |d: usize| match d {
        1 => 1.0,
        2 => 3f64.sqrt(),
        d => 2.0 + (d as f64 - 3.0) * 0.85,
    };
    for _ in 0..RELAX_ITERATIONS {
        let mut next = vec![[0.0, 0.0]; m];
        for i in 0..m {
            let (mut acc, mut wsum) = ([0.0, 0.0], 0.0);
            for j in 0..m {
                if i == j || dist[i][j] == usize::MAX {
                    continue;
                }
                let d = dist[i][j];
                let w = 1.0 / (d * d) as f64;
                let delta = sub(coords[i], coords[j]);
                let len = norm(delta).max(1e-9);
                acc = add(acc, scale(add(coords[j], scale(delta, ideal(d) / len)), w));
                wsum += w;
            }
            next[i] = if wsum > 0.0 { scale(acc, 1.0 / wsum) } else { coords[i] };
        }
        coords = next;
    }
    coords
}

fn atom_label(mol: &MolGraph, i: usize) -> Option<String> {
    let atom = &mol.atoms[i];
    if atom.element == 6 && atom.heavy_degree > 0 && atom.formal_charge == 0 && atom.isotope.is_none() {
        return None;
    }
    let mut label = atom.symbol().to_string();
    match mol.total_h(i) {
        0 => {}
        1 => label.push('H'),
        h => {
            let _ = write!(label, "H{h}");
        }
    }
    match atom.formal_charge {
        0 => {}
        1 => label.push('+'),
        -1 => label.push('-'),
        c if c > 0 => {
            let _ = write!(label, "{c}+");
        }
        c => {
            let _ = write!(label, "{}-", -c);
        }
    }
    Some(label)
}

pub fn depict(mol: &MolGraph, opts: &DepictOptions) -> VectorImage {
    let unit_coords = layout(mol);
    let l = opts.bond_length;
    let (mut lo, mut hi) = ([0.0f64; 2], [0.0f64; 2]);
    if !unit_coords.is_empty() {
        lo = [f64::INFINITY; 2];
        hi = [f64::NEG_INFINITY; 2];
        for p in &unit_coords {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
    }
    let coords: Vec<P> = unit_coords
        .iter()
        .map(|p| [(p[0] - lo[0]) * l + opts.margin, (p[1] - lo[1]) * l + opts.margin])
        .collect();
    let width = (hi[0] - lo[0]) * l + 2.0 * opts.margin;
    let height = (hi[1] - lo[1]) * l + 2.0 * opts.margin;
    let labels: Vec<Option<String>> = (0..mol.n_atoms()).map(|i| atom_label(mol, i)).collect();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.3}" height="{height:.3}" viewBox="0 0 {width:.3} {height:.3}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<g stroke="black" stroke-width="{:.3}" stroke-linecap="round">"#,
        opts.stroke_width
    );
    let systems = rings::ring_systems(mol);
    for bond in &mol.bonds {
        let (mut a, mut b) = (coords[bond.a], coords[bond.b]);
        let dir = unit(sub(b, a));
        let trim = opts.font_size * 0.6;
        if labels[bond.a].is_some() {
            a = add(a, scale(dir, trim));
        }
        if labels[bond.b].is_some() {
            b = sub(b, scale(dir, trim));
        }
        let normal = [-dir[1], dir[0]];
        let g = opts.line_gap;
        match bond.order {
            BondOrder::Single => line(&mut svg, a, b, None),
            BondOrder::Double => {
                line(&mut svg, add(a, scale(normal, g / 2.0)), add(b, scale(normal, g / 2.0)), None);
                line(&mut svg, sub(a, scale(normal, g / 2.0)), sub(b, scale(normal, g / 2.0)), None);
            }
            BondOrder::Triple => {
                line(&mut svg, a, b, None);
                line(&mut svg, add(a, scale(normal, g)), add(b, scale(normal, g)), None);
                line(&mut svg, sub(a, scale(normal, g)), sub(b, scale(normal, g)), None);
            }
            BondOrder::Aromatic => {
                line(&mut svg, a, b, None);
                // dashed companion on the ring-interior side
                let inner = systems
                    .iter()
                    .find(|s| s.contains(&bond.a))
                    .map(|s| centroid(&s.iter().map(|&i| coords[i]).collect::<Vec<_>>()))
                    .unwrap_or(add(a, normal));
                let mid = scale(add(a, b), 0.5);
                let side = if (sub(inner, mid)[0] * normal[0] + sub(inner, mid)[1] * normal[1]) >= 0.0 { 1.0 } else { -1.0 };
                let off = scale(normal, side * g);
                let shrink = scale(dir, l * 0.15);
                line(&mut svg, add(add(a, off), shrink), sub(add(b, off), shrink), Some("3,2"));
            }
        }
    }
    svg.push_str("</g>\n");
    for (i, label) in labels.iter().enumerate() {
        if let Some(text) = label {
            let p = coords[i];
            let _ = writeln!(
                svg,
                r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="{:.3}" text-anchor="middle" dominant-baseline="central">{}</text>"#,
                p[0],
                p[1],
                opts.font_size,
                text
            );
        }
    }
    svg.push_str("</svg>\n");
    VectorImage {
        svg,
        width,
        height,
        coords,
    }
}

fn line(svg: &mut String, a: P, b: P, dash: Option<&str>) {
    let _ = write!(svg, r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}""#, a[0], a[1], b[0], b[1]);
    if let Some(d) = dash {
        let _ = write!(svg, r#" stroke-dasharray="{d}""#);
    }
    svg.push_str("/>\n");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemgraph::parse_smiles;

    fn count(svg: &str, tag: &str) -> usize {
        svg.matches(tag).count()
    }

    #[test]
    fn methane_is_one_label_no_lines() {
        let img = depict(&parse_smiles("C").unwrap(), &DepictOptions::default());
        assert_eq!(count(&img.svg, "<text"), 1);
        assert_eq!(count(&img.svg, "<line"), 0);
    }

    #[test]
    fn benzene_is_a_regular_hexagon() {
        let m = parse_smiles("c1ccccc1").unwrap();
        let c = layout(&m);
        let lengths: Vec<f64> = m.bonds.iter().map(|b| norm(sub(c[b.a], c[b.b]))).collect();
        for len in &lengths {
            assert!((len - lengths[0]).abs() < 1e-6, "{lengths:?}");
        }
        let center = centroid(&c);
        for p in &c {
            assert!((norm(sub(*p, center)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn chain_zigzags_at_120_degrees() {
        let c = layout(&parse_smiles("CCCCC").unwrap());
        for w in c.windows(3) {
            let u = unit(sub(w[0], w[1]));
            let v = unit(sub(w[2], w[1]));
            let cos = u[0] * v[0] + u[1] * v[1];
            assert!((cos + 0.5).abs() < 1e-9);
        }
        assert!((norm(sub(c[0], c[4])) - norm(sub(c[0], c[2])) * 2.0).abs() < 1e-9);
    }

    #[test]
    fn fused_rings_relax_to_near_unit_bonds() {
        let m = parse_smiles("c1ccc2ccccc2c1").unwrap();
        let c = layout(&m);
        for b in &m.bonds {
            let len = norm(sub(c[b.a], c[b.b]));
            assert!((len - 1.0).abs() < 0.15, "bond {b:?} length {len}");
        }
    }

    #[test]
    fn substituents_and_fragments_do_not_overlap() {
        let m = parse_smiles("CC(=O)Nc1ccc(O)cc1.[Na+].[Cl-]").unwrap();
        let c = layout(&m);
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                assert!(norm(sub(c[i], c[j])) > 0.5, "atoms {i} and {j} collide");
            }
        }
    }

    #[test]
    fn heteroatoms_labelled_and_double_bonds_doubled() {
        let img = depict(&parse_smiles("CC(=O)O").unwrap(), &DepictOptions::default());
        assert!(img.svg.contains(">O<"));
        assert!(img.svg.contains(">OH<"));
        assert_eq!(count(&img.svg, "<line"), 4);
    }

    #[test]
    fn rendering_is_deterministic() {
        let m = parse_smiles("O=C(Nc1ccccc1)c1ccncc1").unwrap();
        let a = depict(&m, &DepictOptions::default());
        let b = depict(&m.clone(), &DepictOptions::default());
        assert_eq!(a.svg, b.svg);
    }

    #[test]
    fn png_has_signature() {
        let img = depict(&parse_smiles("c1ccccc1O").unwrap(), &DepictOptions::default());
        let png = img.to_png(1.0).unwrap();
        assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    }
}
