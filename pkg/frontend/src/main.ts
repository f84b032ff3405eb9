import { SessionApi } from "./api.js";
import { SessionStore } from "./state.js";
import { mount } from "./ui.js";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app container");
}
const api = new SessionApi("");
const store = new SessionStore(api);
mount(root, store);
