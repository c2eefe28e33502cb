/**
 * Pose display helpers.
 *
 * The HUD shows the seven canonical pose cells and the SHA-256 content
 * hash the server uses as the slice ETag.  Formatting must agree with
 * the server byte for byte, since the match indicator compares the
 * locally computed hash against the ETag of the displayed image.
 */

import type { PoseJson } from "./api.js";

export function fmt7(x: number): string {
  let s = x.toFixed(7);
  // toFixed resolves exact decimal ties upward; the server rounds them
  // to even.  Ties only occur for dyadic values whose expansion ends at
  // the eighth decimal place, so detect that case exactly and redo the
  // last digit by hand.
  const fine = x.toFixed(8);
  if (fine.endsWith("5") && Number(fine) === x) {
    const trunc = fine.slice(0, -1);
    const lastDigit = trunc.charCodeAt(trunc.length - 1) - 48;
    s = lastDigit % 2 === 0 ? trunc : bumpLastDigit(trunc);
  }
  return s === "-0.0000000" ? "0.0000000" : s;
}

function bumpLastDigit(s: string): string {
  // decimal string increment of the final digit, with carry
  const chars = s.split("");
  for (let i = chars.length - 1; i >= 0; i--) {
    const c = chars[i]!;
    if (c === "." || c === "-") continue;
    if (c === "9") {
      chars[i] = "0";
      continue;
    }
    chars[i] = String.fromCharCode(c.charCodeAt(0) + 1);
    return chars.join("");
  }
  const signed = chars[0] === "-";
  return (signed ? "-1" : "1") + chars.join("").replace("-", "");
}

export function poseCells(pose: PoseJson): string[] {
  return [...pose.t, ...pose.q].map(fmt7);
}

export function formatPoseLine(pose: PoseJson): string {
  const cells = poseCells(pose);
  return `t ${cells.slice(0, 3).join(" ")}  q ${cells.slice(3).join(" ")}`;
}

export async function sha256Hex(bytes: Uint8Array): Promise<string> {
  const digest = await crypto.subtle.digest("SHA-256", bytes as BufferSource);
  return Array.from(new Uint8Array(digest))
    .map((b) => b.toString(16).padStart(2, "0"))
    .join("");
}

export async function poseHash(pose: PoseJson): Promise<string> {
  const payload = poseCells(pose).join(",");
  return sha256Hex(new TextEncoder().encode(payload));
}

/** The slice endpoint quotes its ETag per HTTP convention. */
export function quotedTag(hash: string): string {
  return `"${hash}"`;
}
