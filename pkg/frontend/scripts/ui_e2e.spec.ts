// Browser automation for the full UI: load scene, run clustering,
// accept, edit, save. Requires a Playwright browser install:
//
//   npx playwright install chromium
//   dopplertrack simulate --out /tmp/ui-data --preset acceptance \
//       --count 1 --seed 55 --n-actors 3 --duration-s 1.0 --no-noise
//   dopplertrack serve --data /tmp/ui-data --port 8008 &
//   npx playwright test scripts/ui_e2e.spec.ts
//
// The same flow runs headlessly (no WebGL) in tests/e2e.test.ts, which
// is what CI environments without a browser execute.

import { expect, test } from "@playwright/test";

const BASE = process.env.UI_BASE ?? "http://127.0.0.1:8008";

test("annotate a scene end to end", async ({ page }) => {
  await page.goto(BASE);

  // load the first scene
  const sceneButton = page.locator(".scene-row").first();
  await expect(sceneButton).toBeVisible();
  await sceneButton.click();
  await expect(page.locator("#scene-name")).not.toHaveText("(no scene)");

  // run clustering with the default parameters and wait for the proposal
  await page.locator("#run-btn").click();
  await expect(page.locator("#proposal-label")).toContainText("proposal ready", {
    timeout: 60000,
  });

  // accept it; metrics against ground truth appear
  await page.locator("#accept-btn").click();
  await expect(page.locator("#proposal-label")).toContainText("accepted");
  await expect(page.locator("#metrics-panel")).toContainText("AS", { timeout: 30000 });

  // merge two instances via the edit tools, then undo with Ctrl-Z
  await page.locator("#merge-a").fill("1");
  await page.locator("#merge-b").fill("2");
  await page.locator("#merge-btn").click();
  await page.keyboard.press("Control+z");

  // save; the scene list refreshes to "labeled"
  await page.locator("#save-btn").click();
  await expect(page.locator(".scene-row").first()).toContainText("labeled", {
    timeout: 30000,
  });
});
