// three.js point cloud view: one Points object rebuilt per window, a
// small orbit control, and NDC projection for lasso selection.

import * as THREE from "three";
import type { WindowData } from "./api.js";
import type { Vec2 } from "./lasso.js";

export class PointCloudViewer {
  private renderer: THREE.WebGLRenderer | null = null;
  private readonly scene = new THREE.Scene();
  private readonly camera: THREE.PerspectiveCamera;
  private points: THREE.Points | null = null;
  private positions: Float32Array = new Float32Array(0);
  private orbit = { theta: -Math.PI / 2, phi: 1.05, radius: 90, target: new THREE.Vector3(40, 0, 0) };
  private dragging = false;
  private lastPointer: Vec2 = { x: 0, y: 0 };

  constructor(private readonly container: HTMLElement) {
    this.camera = new THREE.PerspectiveCamera(55, 1, 0.1, 2000);
    this.camera.up.set(0, 0, 1);
    try {
      this.renderer = new THREE.WebGLRenderer({ antialias: true });
    } catch {
      this.renderer = null;
    }
    if (!this.renderer) {
      const msg = document.createElement("div");
      msg.className = "webgl-fallback";
      msg.textContent = "WebGL is unavailable in this browser; the 3D view is disabled.";
      container.appendChild(msg);
      return;
    }
    this.scene.background = new THREE.Color(0x10141a);
    container.appendChild(this.renderer.domElement);
    this.bindControls(this.renderer.domElement);
    this.resize();
    window.addEventListener("resize", () => this.resize());
    this.animate();
  }

  get available(): boolean {
    return this.renderer !== null;
  }

  setWindow(data: WindowData, colors: Float32Array): void {
    if (!this.renderer) return;
    const n = data.positions.length;
    this.positions = new Float32Array(n * 3);
    for (let i = 0; i < n; i++) {
      this.positions[3 * i] = data.positions[i][0];
      this.positions[3 * i + 1] = data.positions[i][1];
      this.positions[3 * i + 2] = data.positions[i][2];
    }
    this.setColors(colors);
  }

  setColors(colors: Float32Array): void {
    if (!this.renderer) return;
    if (this.points) {
      this.scene.remove(this.points);
      this.points.geometry.dispose();
      (this.points.material as THREE.Material).dispose();
    }
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute("position", new THREE.BufferAttribute(this.positions, 3));
    geometry.setAttribute("color", new THREE.BufferAttribute(colors, 3));
    const material = new THREE.PointsMaterial({ size: 0.35, vertexColors: true });
    this.points = new THREE.Points(geometry, material);
    this.scene.add(this.points);
  }

  /** Current screen-space (CSS pixel) projection of every point. */
  projectedPoints(): Vec2[] {
    const out: Vec2[] = [];
    if (!this.renderer) return out;
    const rect = this.renderer.domElement.getBoundingClientRect();
    const v = new THREE.Vector3();
    for (let i = 0; i < this.positions.length / 3; i++) {
      v.set(this.positions[3 * i], this.positions[3 * i + 1], this.positions[3 * i + 2]);
      v.project(this.camera);
      out.push({ x: ((v.x + 1) / 2) * rect.width, y: ((1 - v.y) / 2) * rect.height });
    }
    return out;
  }

  private bindControls(el: HTMLElement): void {
    el.addEventListener("pointerdown", (e) => {
      if (e.shiftKey) return; // shift drag = lasso, handled by main.ts
      this.dragging = true;
      this.lastPointer = { x: e.clientX, y: e.clientY };
    });
    window.addEventListener("pointerup", () => (this.dragging = false));
    window.addEventListener("pointermove", (e) => {
      if (!this.dragging) return;
      const dx = e.clientX - this.lastPointer.x;
      const dy = e.clientY - this.lastPointer.y;
      this.lastPointer = { x: e.clientX, y: e.clientY };
      this.orbit.theta -= dx * 0.005;
      this.orbit.phi = Math.min(Math.max(this.orbit.phi - dy * 0.005, 0.05), Math.PI - 0.05);
    });
    el.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.orbit.radius = Math.min(Math.max(this.orbit.radius * (1 + e.deltaY * 0.001), 5), 600);
    });
  }

  private resize(): void {
    if (!this.renderer) return;
    const w = this.container.clientWidth || 800;
    const h = this.container.clientHeight || 600;
    this.renderer.setSize(w, h);
    this.camera.aspect = w / h;
    this.camera.updateProjectionMatrix();
  }

  private animate = (): void => {
    if (!this.renderer) return;
    const { theta, phi, radius, target } = this.orbit;
    this.camera.position.set(
      target.x + radius * Math.sin(phi) * Math.cos(theta),
      target.y + radius * Math.sin(phi) * Math.sin(theta),
      target.z + radius * Math.cos(phi),
    );
    this.camera.lookAt(target);
    this.renderer.render(this.scene, this.camera);
    requestAnimationFrame(this.animate);
  };
}
