import { ApiClient } from "./api.js";
import { AnnotationApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const annotator = params.get("annotator") ?? "anonymous";
const base = params.get("api") ?? window.location.origin;

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app container");
}
const app = new AnnotationApp(new ApiClient(base), annotator, root, window.localStorage);
void app.start();
